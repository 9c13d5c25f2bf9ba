#include "georefine/field.hpp"

#include "json.hpp"

#include <bit>
#include <fstream>

namespace georefine {

static_assert(std::endian::native == std::endian::little, "voxel payload is little-endian f32");

VoxelGrid read_voxel_grid(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open voxel grid '" + path.string() + "'");
    std::string header;
    if (!std::getline(in, header))
        throw ParseError(path.string() + ": missing header line");

    VoxelGrid vg;
    try {
        auto j = nlohmann::json::parse(header);
        auto res = j.at("resolution").get<std::array<int, 3>>();
        auto lo = j.at("bounds_min").get<std::array<double, 3>>();
        auto hi = j.at("bounds_max").get<std::array<double, 3>>();
        vg.channels = j.value("channels", 1);
        for (int a = 0; a < 3; ++a)
            if (res[a] < 1 || !(hi[a] > lo[a]))
                throw ParseError(path.string() + ": invalid resolution or bounds");
        if (vg.channels < 1)
            throw ParseError(path.string() + ": channels must be positive");
        vg.grid.resolution = res;
        vg.grid.bounds = {Vec3(lo[0], lo[1], lo[2]), Vec3(hi[0], hi[1], hi[2])};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad header: " + e.what());
    }

    const std::size_t count = vg.grid.num_cells() * vg.channels;
    vg.data.resize(count);
    in.read(reinterpret_cast<char*>(vg.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
        throw ParseError(path.string() + ": payload shorter than " + std::to_string(count) + " floats");
    return vg;
}

void write_voxel_grid(const std::filesystem::path& path, const VoxelGrid& vg)
{
    if (vg.data.size() != vg.grid.num_cells() * vg.channels)
        throw Error("voxel grid data size does not match its header");
    const Vec3& lo = vg.grid.bounds.min;
    const Vec3& hi = vg.grid.bounds.max;
    nlohmann::json j = {
        {"resolution", vg.grid.resolution},
        {"bounds_min", {lo.x(), lo.y(), lo.z()}},
        {"bounds_max", {hi.x(), hi.y(), hi.z()}},
        {"channels", vg.channels},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write voxel grid '" + path.string() + "'");
    out << j.dump() << '\n';
    out.write(reinterpret_cast<const char*>(vg.data.data()), static_cast<std::streamsize>(vg.data.size() * sizeof(float)));
    if (!out)
        throw Error("write failed for '" + path.string() + "'");
}

} // namespace georefine
