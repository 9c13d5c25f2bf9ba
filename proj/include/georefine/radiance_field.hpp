#pragma once

#include "georefine/field.hpp"
#include "georefine/render.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <vector>

namespace georefine {

/// Fully connected network with ReLU hidden layers and a linear output.
/// Parameters live in an external flat buffer: per layer a column-major
/// (out x in) weight block followed by the bias.
class Mlp
{
public:
    Mlp() = default;
    explicit Mlp(std::vector<int> sizes);

    const std::vector<int>& sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    std::size_t num_params() const { return num_params_; }

    /// He-normal weights, zero hidden biases, constant output bias.
    void initialize(double* params, SplitMix64& rng, double output_bias) const;

    struct Cache
    {
        // activations[0] is the input, the last entry the linear output;
        // hidden entries are post-ReLU.
        std::vector<Eigen::MatrixXd> activations;
    };

    /// Column-per-sample forward pass.
    void forward(const double* params, const Eigen::MatrixXd& input, Cache& cache) const;
    const Eigen::MatrixXd& output(const Cache& cache) const { return cache.activations.back(); }

    /// Accumulates parameter gradients into dparams; writes the input gradient
    /// when dinput is non-null.
    void backward(const double* params, const Cache& cache, const Eigen::MatrixXd& doutput, double* dparams,
                  Eigen::MatrixXd* dinput) const;

private:
    std::vector<int> sizes_;
    std::vector<std::size_t> offsets_; // weight block start per layer
    std::size_t num_params_ = 0;
};

struct FieldConfig
{
    int latent_dim = kLatentDim;
    int hidden_width = 64;
    int hidden_layers = 2;
    int embed_dim = 8;
    int position_freqs = 10;
    int direction_freqs = 4;
    int resolution = 96;
    int blur_passes = 4;
    BlurMode blur = BlurMode::Box;
    double latent_init = 0.1;     // std-dev of the initial vertex codes
    double sigma_bias = -10.0;    // initial output bias of the density network
    double density_scale = 1.0;   // sigma = density_scale * softplus(F_sigma)

    void validate() const;
};

/// Per-sample intermediates kept for the backward pass.
struct SampleBatch
{
    int frame = 0;
    std::vector<TrilinearStencil> stencils;
    std::vector<std::uint8_t> inside;
    Eigen::MatrixXd latent;  // latent_dim x B
    Eigen::MatrixXd color_in;
    Mlp::Cache sigma_cache;
    Mlp::Cache color_cache;
    std::vector<double> sigma;
    std::vector<Vec3> rgb;
};

/// Vertex-anchored latent radiance field. All trainable parameters sit in one
/// flat vector laid out as
///   [density net | colour net | frame embeddings K x E | vertex codes N x d]
/// with the embeddings and codes row-major.
class RadianceField
{
public:
    RadianceField() = default;
    RadianceField(const FieldConfig& config, int num_vertices, int num_frames, const Aabb& bounds,
                  std::uint64_t seed);

    const FieldConfig& config() const { return config_; }
    int num_vertices() const { return num_vertices_; }
    int num_frames() const { return num_frames_; }
    const GridSpec& grid() const { return grid_; }
    const Mlp& sigma_net() const { return sigma_net_; }
    const Mlp& color_net() const { return color_net_; }

    std::size_t num_params() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    std::size_t sigma_offset() const { return 0; }
    std::size_t color_offset() const { return sigma_net_.num_params(); }
    std::size_t embedding_offset() const { return color_offset() + color_net_.num_params(); }
    std::size_t code_offset() const
    {
        return embedding_offset() + static_cast<std::size_t>(num_frames_) * config_.embed_dim;
    }

    std::span<const double> codes() const { return std::span(params_).subspan(code_offset()); }
    std::span<double> codes() { return std::span(params_).subspan(code_offset()); }
    LatentCodes codes_matrix() const;

    /// Embedding of frame k; k = -1 gives the mean over training frames,
    /// used for views that were not part of training.
    Eigen::VectorXd embedding(int k) const;

    LatentDiffusion diffusion(const TriMesh& mesh) const;
    LatentVolume latent_volume(const LatentDiffusion& diffusion, Exec exec = Exec::Parallel) const;

    double eval_sigma(const LatentVolume& volume, const Vec3& q) const;
    /// Density only, skipping the colour network.
    void eval_sigma(const LatentVolume& volume, std::span<const Vec3> points, std::span<double> sigma) const;
    Vec3 eval_color(const LatentVolume& volume, const Vec3& q, const Vec3& direction, int frame) const;

    /// Evaluates a batch of points seen along one direction; fills
    /// batch.sigma and batch.rgb.
    void forward(const LatentVolume& volume, std::span<const Vec3> points, const Vec3& direction, int frame,
                 SampleBatch& batch) const;

    /// Backpropagates d(loss)/d(sigma) and d(loss)/d(rgb). Network and
    /// embedding gradients are accumulated into dparams (full parameter
    /// length); the latent gradient per sample is written to dlatent.
    void backward(const SampleBatch& batch, std::span<const double> dsigma, std::span<const Vec3> drgb,
                  std::span<double> dparams, Eigen::MatrixXd& dlatent) const;

    void save(const std::filesystem::path& path) const;
    static RadianceField load(const std::filesystem::path& path);

private:
    void setup();
    void encode_color_input(const Vec3& q, const Vec3& direction, const Eigen::VectorXd& embed, const double* latent,
                            double* out) const;

    FieldConfig config_;
    int num_vertices_ = 0;
    int num_frames_ = 0;
    GridSpec grid_;
    Mlp sigma_net_;
    Mlp color_net_;
    std::vector<double> params_;
};

/// A field bound to one frame's geometry, renderable as a RadianceSource.
class PosedField final : public RadianceSource
{
public:
    PosedField(const RadianceField& field, const TriMesh& mesh, int frame);

    Aabb bounds() const override { return field_->grid().bounds; }
    void evaluate(std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                  std::span<Vec3> rgb) const override;

    const LatentVolume& volume() const { return volume_; }

private:
    const RadianceField* field_;
    LatentVolume volume_;
    int frame_;
};

/// Density view of a posed field, for height-field extraction.
class FieldDensity final : public DensitySource
{
public:
    FieldDensity(const RadianceField& field, const TriMesh& mesh);
    Aabb bounds() const override { return field_->grid().bounds; }
    double density(const Vec3& q) const override;
    void density_batch(std::span<const Vec3> q, std::span<double> out) const override;

private:
    const RadianceField* field_;
    LatentVolume volume_;
};

} // namespace georefine
