#include "georefine/radiance_field.hpp"

#include <cmath>

namespace georefine {

namespace {

using MatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;

} // namespace

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes))
{
    if (sizes_.size() < 2)
        throw Error("an MLP needs at least an input and an output size");
    for (int s : sizes_)
        if (s < 1)
            throw Error("MLP layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(num_params_);
        num_params_ += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
}

void Mlp::initialize(double* params, SplitMix64& rng, double output_bias) const
{
    const std::size_t layers = offsets_.size();
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = sizes_[l], out = sizes_[l + 1];
        const double scale = std::sqrt(2.0 / in);
        double* w = params + offsets_[l];
        for (int i = 0; i < in * out; ++i)
            w[i] = scale * rng.normal();
        double* b = w + static_cast<std::size_t>(in) * out;
        for (int i = 0; i < out; ++i)
            b[i] = l + 1 == layers ? output_bias : 0.0;
    }
}

void Mlp::forward(const double* params, const Eigen::MatrixXd& input, Cache& cache) const
{
    if (input.rows() != sizes_.front())
        throw Error("MLP input has " + std::to_string(input.rows()) + " rows, expected " +
                    std::to_string(sizes_.front()));
    const std::size_t layers = offsets_.size();
    cache.activations.resize(layers + 1);
    cache.activations[0] = input;
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = sizes_[l], out = sizes_[l + 1];
        MatMap w(params + offsets_[l], out, in);
        VecMap b(params + offsets_[l] + static_cast<std::size_t>(in) * out, out);
        Eigen::MatrixXd& z = cache.activations[l + 1];
        z.noalias() = w * cache.activations[l];
        z.colwise() += b;
        if (l + 1 < layers)
            z = z.cwiseMax(0.0);
    }
}

void Mlp::backward(const double* params, const Cache& cache, const Eigen::MatrixXd& doutput, double* dparams,
                   Eigen::MatrixXd* dinput) const
{
    const std::size_t layers = offsets_.size();
    Eigen::MatrixXd delta = doutput;
    for (std::size_t l = layers; l-- > 0;) {
        const int in = sizes_[l], out = sizes_[l + 1];
        const Eigen::MatrixXd& a = cache.activations[l];
        Eigen::Map<Eigen::MatrixXd> dw(dparams + offsets_[l], out, in);
        Eigen::Map<Eigen::VectorXd> db(dparams + offsets_[l] + static_cast<std::size_t>(in) * out, out);
        dw.noalias() += delta * a.transpose();
        db += delta.rowwise().sum();
        MatMap w(params + offsets_[l], out, in);
        if (l == 0) {
            if (dinput)
                dinput->noalias() = w.transpose() * delta;
            break;
        }
        Eigen::MatrixXd prev = w.transpose() * delta;
        delta = (a.array() > 0.0).select(prev, 0.0);
    }
}

} // namespace georefine
