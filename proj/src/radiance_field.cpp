#include "georefine/radiance_field.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

namespace georefine {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

void FieldConfig::validate() const
{
    if (latent_dim < 1 || hidden_width < 1 || hidden_layers < 1 || embed_dim < 0)
        throw Error("field network sizes must be positive");
    if (position_freqs < 0 || direction_freqs < 0)
        throw Error("encoding frequencies must be non-negative");
    if (resolution < 2 || resolution > 256)
        throw Error("latent resolution must lie in [2, 256]");
    if (blur_passes < 0)
        throw Error("blur passes must be non-negative");
    if (!(density_scale > 0.0) || !std::isfinite(latent_init) || !std::isfinite(sigma_bias))
        throw Error("invalid field scale parameters");
}

RadianceField::RadianceField(const FieldConfig& config, int num_vertices, int num_frames, const Aabb& bounds,
                             std::uint64_t seed)
    : config_(config), num_vertices_(num_vertices), num_frames_(num_frames), grid_(GridSpec::cube(config.resolution, bounds))
{
    config_.validate();
    if (num_vertices < 1 || num_frames < 1)
        throw Error("a field needs at least one vertex and one frame");
    if (bounds.empty() || (bounds.extent().array() <= 0.0).any())
        throw Error("field bounds must have positive extent");
    setup();

    SplitMix64 rng(hash_seed(seed, 0));
    sigma_net_.initialize(params_.data() + sigma_offset(), rng, config_.sigma_bias);
    color_net_.initialize(params_.data() + color_offset(), rng, 0.0);
    for (std::size_t i = embedding_offset(); i < params_.size(); ++i)
        params_[i] = config_.latent_init * rng.normal();
}

void RadianceField::setup()
{
    std::vector<int> sizes{config_.latent_dim};
    for (int l = 0; l < config_.hidden_layers; ++l)
        sizes.push_back(config_.hidden_width);
    sizes.push_back(1);
    sigma_net_ = Mlp(sizes);
    sizes.front() = config_.latent_dim + encoded_size(3, config_.position_freqs) +
                    encoded_size(3, config_.direction_freqs) + config_.embed_dim;
    sizes.back() = 3;
    color_net_ = Mlp(sizes);
    params_.assign(code_offset() + static_cast<std::size_t>(num_vertices_) * config_.latent_dim, 0.0);
}

LatentCodes RadianceField::codes_matrix() const
{
    LatentCodes z(num_vertices_, config_.latent_dim);
    auto src = codes();
    for (int v = 0; v < num_vertices_; ++v)
        for (int c = 0; c < config_.latent_dim; ++c)
            z(v, c) = src[static_cast<std::size_t>(v) * config_.latent_dim + c];
    return z;
}

Eigen::VectorXd RadianceField::embedding(int k) const
{
    const int e = config_.embed_dim;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(e);
    if (k >= num_frames_ || k < -1)
        throw Error("frame index " + std::to_string(k) + " out of range (" + std::to_string(num_frames_) + " frames)");
    if (k >= 0) {
        for (int i = 0; i < e; ++i)
            out[i] = params_[embedding_offset() + static_cast<std::size_t>(k) * e + i];
        return out;
    }
    for (int f = 0; f < num_frames_; ++f)
        for (int i = 0; i < e; ++i)
            out[i] += params_[embedding_offset() + static_cast<std::size_t>(f) * e + i];
    return out / num_frames_;
}

LatentDiffusion RadianceField::diffusion(const TriMesh& mesh) const
{
    if (static_cast<int>(mesh.vertices.size()) != num_vertices_)
        throw Error("mesh has " + std::to_string(mesh.vertices.size()) + " vertices, field expects " +
                    std::to_string(num_vertices_));
    return LatentDiffusion(mesh, grid_, config_.blur_passes, config_.blur);
}

LatentVolume RadianceField::latent_volume(const LatentDiffusion& diffusion, Exec exec) const
{
    return diffusion.apply(codes(), config_.latent_dim, exec);
}

void RadianceField::encode_color_input(const Vec3& q, const Vec3& direction, const Eigen::VectorXd& embed,
                                       const double* latent, double* out) const
{
    const int d = config_.latent_dim;
    for (int i = 0; i < d; ++i)
        out[i] = latent[i];
    out += d;
    // Positions enter the encoding normalised to [-1, 1] over the field bounds.
    const Vec3 qn = (2.0 * (q - grid_.bounds.min).cwiseQuotient(grid_.bounds.extent())).array() - 1.0;
    positional_encoding(std::span<const double>(qn.data(), 3), config_.position_freqs, out);
    out += encoded_size(3, config_.position_freqs);
    positional_encoding(std::span<const double>(direction.data(), 3), config_.direction_freqs, out);
    out += encoded_size(3, config_.direction_freqs);
    for (int i = 0; i < config_.embed_dim; ++i)
        out[i] = embed[i];
}

void RadianceField::forward(const LatentVolume& volume, std::span<const Vec3> points, const Vec3& direction,
                            int frame, SampleBatch& batch) const
{
    const int d = config_.latent_dim;
    if (volume.dim != d)
        throw Error("latent volume dimension does not match the field");
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    const Eigen::VectorXd embed = embedding(frame);
    batch.frame = frame;
    batch.stencils.resize(points.size());
    batch.inside.resize(points.size());
    batch.latent.setZero(d, n);
    batch.color_in.resize(color_net_.input_size(), n);
    for (Eigen::Index b = 0; b < n; ++b) {
        TrilinearStencil& s = batch.stencils[b];
        batch.inside[b] = trilinear_stencil(volume.grid, points[b], s);
        double* lat = batch.latent.col(b).data();
        if (batch.inside[b]) {
            for (int c = 0; c < 8; ++c) {
                const double w = s.weight[c];
                if (w == 0.0)
                    continue;
                const double* src = volume.cell(s.index[c]);
                for (int k = 0; k < d; ++k)
                    lat[k] += w * src[k];
            }
        }
        encode_color_input(points[b], direction, embed, lat, batch.color_in.col(b).data());
    }

    sigma_net_.forward(params_.data() + sigma_offset(), batch.latent, batch.sigma_cache);
    color_net_.forward(params_.data() + color_offset(), batch.color_in, batch.color_cache);
    const Eigen::MatrixXd& o = sigma_net_.output(batch.sigma_cache);
    const Eigen::MatrixXd& y = color_net_.output(batch.color_cache);
    batch.sigma.resize(points.size());
    batch.rgb.resize(points.size());
    for (Eigen::Index b = 0; b < n; ++b) {
        batch.sigma[b] = config_.density_scale * softplus(o(0, b));
        batch.rgb[b] = Vec3(sigmoid(y(0, b)), sigmoid(y(1, b)), sigmoid(y(2, b)));
    }
}

void RadianceField::backward(const SampleBatch& batch, std::span<const double> dsigma, std::span<const Vec3> drgb,
                             std::span<double> dparams, Eigen::MatrixXd& dlatent) const
{
    const Eigen::Index n = static_cast<Eigen::Index>(batch.sigma.size());
    if (dparams.size() != params_.size())
        throw Error("gradient buffer has the wrong size");
    const Eigen::MatrixXd& o = sigma_net_.output(batch.sigma_cache);
    Eigen::MatrixXd dout(1, n);
    for (Eigen::Index b = 0; b < n; ++b)
        dout(0, b) = dsigma[b] * config_.density_scale * sigmoid(o(0, b));
    Eigen::MatrixXd dcolor(3, n);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int c = 0; c < 3; ++c) {
            const double r = batch.rgb[b][c];
            dcolor(c, b) = drgb[b][c] * r * (1.0 - r);
        }

    Eigen::MatrixXd dlat_sigma, dcolor_in;
    sigma_net_.backward(params_.data() + sigma_offset(), batch.sigma_cache, dout, dparams.data() + sigma_offset(),
                        &dlat_sigma);
    color_net_.backward(params_.data() + color_offset(), batch.color_cache, dcolor, dparams.data() + color_offset(),
                        &dcolor_in);
    const int d = config_.latent_dim;
    dlatent = dlat_sigma + dcolor_in.topRows(d);

    const int e = config_.embed_dim;
    if (e > 0) {
        const Eigen::VectorXd de = dcolor_in.bottomRows(e).rowwise().sum();
        if (batch.frame >= 0) {
            for (int i = 0; i < e; ++i)
                dparams[embedding_offset() + static_cast<std::size_t>(batch.frame) * e + i] += de[i];
        } else {
            for (int f = 0; f < num_frames_; ++f)
                for (int i = 0; i < e; ++i)
                    dparams[embedding_offset() + static_cast<std::size_t>(f) * e + i] += de[i] / num_frames_;
        }
    }
}

double RadianceField::eval_sigma(const LatentVolume& volume, const Vec3& q) const
{
    SampleBatch batch;
    forward(volume, std::span<const Vec3>(&q, 1), Vec3::UnitZ(), -1, batch);
    return batch.sigma[0];
}

void RadianceField::eval_sigma(const LatentVolume& volume, std::span<const Vec3> points, std::span<double> sigma) const
{
    const int d = config_.latent_dim;
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd latent(d, n);
    for (Eigen::Index b = 0; b < n; ++b)
        volume.query(points[b], latent.col(b).data());
    Mlp::Cache cache;
    sigma_net_.forward(params_.data() + sigma_offset(), latent, cache);
    const Eigen::MatrixXd& o = sigma_net_.output(cache);
    for (Eigen::Index b = 0; b < n; ++b)
        sigma[b] = config_.density_scale * softplus(o(0, b));
}

Vec3 RadianceField::eval_color(const LatentVolume& volume, const Vec3& q, const Vec3& direction, int frame) const
{
    if (frame < 0 || frame >= num_frames_)
        throw Error("frame index " + std::to_string(frame) + " out of range (" + std::to_string(num_frames_) +
                    " frames)");
    SampleBatch batch;
    forward(volume, std::span<const Vec3>(&q, 1), direction, frame, batch);
    return batch.rgb[0];
}

void RadianceField::save(const std::filesystem::path& path) const
{
    nlohmann::json header{
        {"format", "georefine-field"},
        {"version", 1},
        {"num_vertices", num_vertices_},
        {"num_frames", num_frames_},
        {"bounds_min", {grid_.bounds.min.x(), grid_.bounds.min.y(), grid_.bounds.min.z()}},
        {"bounds_max", {grid_.bounds.max.x(), grid_.bounds.max.y(), grid_.bounds.max.z()}},
        {"num_params", params_.size()},
        {"config",
         {{"latent_dim", config_.latent_dim},
          {"hidden_width", config_.hidden_width},
          {"hidden_layers", config_.hidden_layers},
          {"embed_dim", config_.embed_dim},
          {"position_freqs", config_.position_freqs},
          {"direction_freqs", config_.direction_freqs},
          {"resolution", config_.resolution},
          {"blur_passes", config_.blur_passes},
          {"blur", blur_mode_name(config_.blur)},
          {"latent_init", config_.latent_init},
          {"sigma_bias", config_.sigma_bias},
          {"density_scale", config_.density_scale}}},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write '" + path.string() + "'");
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(params_.size() * sizeof(double)));
    if (!out)
        throw Error("failed writing '" + path.string() + "'");
}

RadianceField RadianceField::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("'" + path.string() + "': missing field header");
    RadianceField f;
    try {
        const auto h = nlohmann::json::parse(line);
        if (h.at("format") != "georefine-field")
            throw ParseError("'" + path.string() + "' is not a field file");
        const auto& c = h.at("config");
        f.config_.latent_dim = c.at("latent_dim");
        f.config_.hidden_width = c.at("hidden_width");
        f.config_.hidden_layers = c.at("hidden_layers");
        f.config_.embed_dim = c.at("embed_dim");
        f.config_.position_freqs = c.at("position_freqs");
        f.config_.direction_freqs = c.at("direction_freqs");
        f.config_.resolution = c.at("resolution");
        f.config_.blur_passes = c.at("blur_passes");
        f.config_.blur = parse_blur_mode(c.at("blur").get<std::string>());
        f.config_.latent_init = c.at("latent_init");
        f.config_.sigma_bias = c.at("sigma_bias");
        f.config_.density_scale = c.at("density_scale");
        f.num_vertices_ = h.at("num_vertices");
        f.num_frames_ = h.at("num_frames");
        Aabb box;
        for (int a = 0; a < 3; ++a) {
            box.min[a] = h.at("bounds_min").at(a);
            box.max[a] = h.at("bounds_max").at(a);
        }
        f.config_.validate();
        f.grid_ = GridSpec::cube(f.config_.resolution, box);
        f.setup();
        if (h.at("num_params").get<std::size_t>() != f.params_.size())
            throw ParseError("'" + path.string() + "': parameter count does not match the config");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("'" + path.string() + "': bad field header: " + e.what());
    }
    in.read(reinterpret_cast<char*>(f.params_.data()), static_cast<std::streamsize>(f.params_.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(f.params_.size() * sizeof(double)))
        throw ParseError("'" + path.string() + "': truncated parameter block");
    return f;
}

PosedField::PosedField(const RadianceField& field, const TriMesh& mesh, int frame)
    : field_(&field), volume_(field.latent_volume(field.diffusion(mesh))), frame_(frame)
{
    if (frame < -1 || frame >= field.num_frames())
        throw Error("frame index " + std::to_string(frame) + " out of range");
}

void PosedField::evaluate(std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                          std::span<Vec3> rgb) const
{
    SampleBatch batch;
    field_->forward(volume_, points, direction, frame_, batch);
    std::copy(batch.sigma.begin(), batch.sigma.end(), sigma.begin());
    std::copy(batch.rgb.begin(), batch.rgb.end(), rgb.begin());
}

FieldDensity::FieldDensity(const RadianceField& field, const TriMesh& mesh)
    : field_(&field), volume_(field.latent_volume(field.diffusion(mesh)))
{
}

double FieldDensity::density(const Vec3& q) const
{
    if (!volume_.grid.bounds.contains(q))
        return 0.0;
    return field_->eval_sigma(volume_, q);
}

void FieldDensity::density_batch(std::span<const Vec3> q, std::span<double> out) const
{
    field_->eval_sigma(volume_, q, out);
    for (std::size_t i = 0; i < q.size(); ++i)
        if (!volume_.grid.bounds.contains(q[i]))
            out[i] = 0.0;
}

} // namespace georefine
