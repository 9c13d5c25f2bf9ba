#include "georefine/mesh.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace georefine {

namespace {

std::string to_lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what)
{
    throw ParseError("line " + std::to_string(line) + ": " + what);
}

// Fan-triangulates a polygon and validates indices against the final count later.
void push_polygon(TriMesh& mesh, const std::vector<int>& poly)
{
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
        mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
}

void append_number(std::string& out, double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

} // namespace

TriMesh read_obj(std::istream& in)
{
    TriMesh mesh;
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::size_t> face_lines;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#')
            continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z()))
                parse_fail(lineno, "malformed vertex record");
            mesh.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ss >> tok) {
                std::string head = tok.substr(0, tok.find('/'));
                int idx = 0;
                auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
                if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0)
                    parse_fail(lineno, "malformed face index '" + tok + "'");
                // Negative indices are relative to the vertices read so far.
                int resolved = idx > 0 ? idx - 1 : static_cast<int>(mesh.vertices.size()) + idx;
                poly.push_back(resolved);
            }
            if (poly.size() < 3)
                parse_fail(lineno, "face with fewer than three vertices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k)
                face_lines.push_back(lineno);
            push_polygon(mesh, poly);
        }
    }
    const int n = static_cast<int>(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (int idx : mesh.faces[f])
            if (idx < 0 || idx >= n)
                parse_fail(face_lines[f], "vertex index " + std::to_string(idx + 1) + " out of range (" +
                                              std::to_string(n) + " vertices)");
    mesh.validate();
    return mesh;
}

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType ply_type(const std::string& name, std::size_t line)
{
    if (name == "char" || name == "int8") return PlyType::Int8;
    if (name == "uchar" || name == "uint8") return PlyType::UInt8;
    if (name == "short" || name == "int16") return PlyType::Int16;
    if (name == "ushort" || name == "uint16") return PlyType::UInt16;
    if (name == "int" || name == "int32") return PlyType::Int32;
    if (name == "uint" || name == "uint32") return PlyType::UInt32;
    if (name == "float" || name == "float32") return PlyType::Float32;
    if (name == "double" || name == "float64") return PlyType::Float64;
    parse_fail(line, "unknown PLY type '" + name + "'");
}

std::size_t ply_size(PlyType t)
{
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
    }
    return 0;
}

struct PlyProperty
{
    std::string name;
    PlyType type = PlyType::Float32;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
};

struct PlyElement
{
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

static_assert(std::endian::native == std::endian::little, "binary PLY reader assumes a little-endian host");

double read_binary(std::istream& in, PlyType t, std::size_t& offset)
{
    char buf[8];
    std::size_t sz = ply_size(t);
    if (!in.read(buf, static_cast<std::streamsize>(sz)))
        throw ParseError("binary PLY truncated at byte offset " + std::to_string(offset));
    offset += sz;
    switch (t) {
    case PlyType::Int8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
    case PlyType::UInt8: { std::uint8_t v; std::memcpy(&v, buf, 1); return v; }
    case PlyType::Int16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::Int32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::Float32: { float v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::Float64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0.0;
}

} // namespace

TriMesh read_ply(std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() {
        if (!std::getline(in, line))
            parse_fail(lineno, "unexpected end of PLY header");
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
    };

    next_line();
    if (line != "ply")
        parse_fail(lineno, "missing 'ply' magic");

    bool binary = false;
    std::vector<PlyElement> elements;
    for (;;) {
        next_line();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii")
                binary = false;
            else if (fmt == "binary_little_endian")
                binary = true;
            else
                parse_fail(lineno, "unsupported PLY format '" + fmt + "'");
        } else if (kw == "element") {
            PlyElement e;
            if (!(ss >> e.name >> e.count))
                parse_fail(lineno, "malformed element line");
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty())
                parse_fail(lineno, "property before any element");
            PlyProperty p;
            std::string type;
            ss >> type;
            if (type == "list") {
                std::string ct, it;
                ss >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = ply_type(ct, lineno);
                p.type = ply_type(it, lineno);
            } else {
                p.type = ply_type(type, lineno);
                ss >> p.name;
            }
            elements.back().props.push_back(p);
        } else if (kw == "end_header") {
            break;
        } else if (kw == "comment" || kw == "obj_info" || kw.empty()) {
            continue;
        } else {
            parse_fail(lineno, "unexpected header keyword '" + kw + "'");
        }
    }

    TriMesh mesh;
    std::size_t offset = 0; // binary byte offset past the header
    for (const PlyElement& e : elements) {
        int ix = -1, iy = -1, iz = -1, iface = -1;
        for (std::size_t k = 0; k < e.props.size(); ++k) {
            const std::string& n = e.props[k].name;
            if (n == "x") ix = static_cast<int>(k);
            if (n == "y") iy = static_cast<int>(k);
            if (n == "z") iz = static_cast<int>(k);
            if (n == "vertex_indices" || n == "vertex_index") iface = static_cast<int>(k);
        }
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        if (is_vertex && (ix < 0 || iy < 0 || iz < 0))
            throw ParseError("PLY vertex element lacks x/y/z");

        for (std::size_t r = 0; r < e.count; ++r) {
            std::istringstream row;
            if (!binary) {
                next_line();
                row.str(line);
            }
            Vec3 p = Vec3::Zero();
            std::vector<int> poly;
            for (std::size_t k = 0; k < e.props.size(); ++k) {
                const PlyProperty& prop = e.props[k];
                auto scalar = [&](PlyType t) {
                    if (binary)
                        return read_binary(in, t, offset);
                    double v;
                    if (!(row >> v))
                        parse_fail(lineno, "malformed " + e.name + " record");
                    return v;
                };
                if (prop.is_list) {
                    auto count = static_cast<std::size_t>(scalar(prop.count_type));
                    for (std::size_t c = 0; c < count; ++c) {
                        double v = scalar(prop.type);
                        if (static_cast<int>(k) == iface)
                            poly.push_back(static_cast<int>(v));
                    }
                } else {
                    double v = scalar(prop.type);
                    if (static_cast<int>(k) == ix) p.x() = v;
                    if (static_cast<int>(k) == iy) p.y() = v;
                    if (static_cast<int>(k) == iz) p.z() = v;
                }
            }
            if (is_vertex)
                mesh.vertices.push_back(p);
            if (is_face) {
                if (poly.size() < 3) {
                    if (binary)
                        throw ParseError("face " + std::to_string(r) + " at byte offset " + std::to_string(offset) +
                                         " has fewer than three vertices");
                    parse_fail(lineno, "face with fewer than three vertices");
                }
                for (int idx : poly)
                    if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size()) {
                        if (binary)
                            throw ParseError("face " + std::to_string(r) + " (ending at byte offset " +
                                             std::to_string(offset) + ") references vertex " + std::to_string(idx) +
                                             " out of range");
                        parse_fail(lineno, "vertex index " + std::to_string(idx) + " out of range");
                    }
                push_polygon(mesh, poly);
            }
        }
    }
    mesh.validate();
    return mesh;
}

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format)
{
    if (format == MeshFormat::Auto) {
        std::string ext = to_lower(path.extension().string());
        if (ext == ".obj")
            format = MeshFormat::Obj;
        else if (ext == ".ply")
            format = MeshFormat::Ply;
        else
            throw Error("cannot infer mesh format from '" + path.string() + "'");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open mesh file '" + path.string() + "'");
    try {
        return format == MeshFormat::Obj ? read_obj(in) : read_ply(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_obj(std::ostream& out, const TriMesh& mesh)
{
    std::string buf;
    buf.reserve(mesh.vertices.size() * 64 + mesh.faces.size() * 24);
    for (const Vec3& v : mesh.vertices) {
        buf += "v ";
        append_number(buf, v.x());
        buf += ' ';
        append_number(buf, v.y());
        buf += ' ';
        append_number(buf, v.z());
        buf += '\n';
    }
    for (const Face& f : mesh.faces) {
        buf += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' + std::to_string(f[2] + 1) + '\n';
    }
    out << buf;
}

void save_obj(const std::filesystem::path& path, const TriMesh& mesh)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write '" + path.string() + "'");
    write_obj(out, mesh);
    if (!out)
        throw Error("write failed for '" + path.string() + "'");
}

} // namespace georefine
