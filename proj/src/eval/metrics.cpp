#include "angiodit/eval/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/parallel.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::eval {

namespace {

using Mat = Eigen::MatrixXd;

Mat to_matrix(const GaussianFit& g) {
    const auto d = g.dim();
    Mat m(d, d);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) m(i, j) = g.cov[static_cast<std::size_t>(i * d + j)];
    return m;
}

Mat psd_sqrt(const Mat& a) {
    const Mat sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> solver(sym);
    if (solver.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
    Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

double cosine(const Real* a, const Real* b, std::int64_t n) {
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / std::sqrt(na * nb);
}

}  // namespace

GaussianFit fit_gaussian(const Tensor& features) {
    if (features.rank() != 2) throw ShapeError("fit_gaussian: features must be [N, D], got " + shape_str(features.shape()));
    const std::int64_t n = features.dim(0), d = features.dim(1);
    if (n < 2) throw ShapeError("fit_gaussian: need at least 2 samples");
    if (d < 1) throw ShapeError("fit_gaussian: feature dimension must be positive");
    if (!all_finite(features)) throw NumericError("fit_gaussian: non-finite features");

    GaussianFit g;
    g.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) g.mean[static_cast<std::size_t>(j)] += features[i * d + j];
    for (auto& m : g.mean) m /= static_cast<double>(n);

    g.cov.assign(static_cast<std::size_t>(d * d), 0.0);
    std::vector<double> c(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) c[static_cast<std::size_t>(j)] = features[i * d + j] - g.mean[static_cast<std::size_t>(j)];
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = 0; b < d; ++b)
                g.cov[static_cast<std::size_t>(a * d + b)] += c[static_cast<std::size_t>(a)] * c[static_cast<std::size_t>(b)];
    }
    for (auto& v : g.cov) v /= static_cast<double>(n - 1);
    if (n <= d)
        for (std::int64_t a = 0; a < d; ++a) g.cov[static_cast<std::size_t>(a * d + a)] += kCovarianceEpsilon;
    return g;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    const auto d = a.dim();
    if (d != b.dim() || a.cov.size() != static_cast<std::size_t>(d * d) || b.cov.size() != a.cov.size())
        throw ShapeError("frechet_distance: feature dimensions disagree");
    double mean_term = 0;
    for (std::int64_t i = 0; i < d; ++i) {
        const double diff = a.mean[static_cast<std::size_t>(i)] - b.mean[static_cast<std::size_t>(i)];
        mean_term += diff * diff;
    }
    const Mat sa = to_matrix(a), sb = to_matrix(b);
    const Mat root_a = psd_sqrt(sa);
    const Mat inner = root_a * sb * root_a;
    Eigen::SelfAdjointEigenSolver<Mat> solver(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
    const double cross = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double result = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if (!std::isfinite(result)) throw NumericError("frechet_distance: non-finite result");
    return std::max(result, 0.0);
}

Tensor VaePooledExtractor::extract(const VideoClip& clip) const {
    NoGradGuard guard;
    const Tensor mu = vae_->encode(clip).mu.value();  // [1, Cz, Tz, Hz, Wz]
    const std::int64_t cz = mu.dim(1), per = mu.numel() / cz;
    Tensor out({cz});
    for (std::int64_t c = 0; c < cz; ++c) {
        double s = 0;
        for (std::int64_t i = 0; i < per; ++i) s += mu[c * per + i];
        out[c] = static_cast<Real>(s / static_cast<double>(per));
    }
    return out;
}

const Tensor& RandomProjectionExtractor::matrix(std::int64_t pixels) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(pixels);
    if (it != cache_.end()) return *it->second;
    auto m = std::make_shared<Tensor>(Shape{dim_, pixels});
    Rng rng = Rng::derive(seed_, static_cast<std::uint64_t>(pixels));
    const Real s = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(pixels)));
    for (auto& v : m->values()) v = rng.normal() * s;
    return *cache_.emplace(pixels, std::move(m)).first->second;
}

Tensor RandomProjectionExtractor::extract(const VideoClip& clip) const {
    if (clip.data.empty()) throw ShapeError("rand-proj: empty clip");
    const std::int64_t p = clip.data.numel();
    const Tensor& m = matrix(p);
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> proj(m.data(), dim_, p);
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> x(clip.data.data(), p);
    Tensor out({dim_});
    Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(out.data(), dim_) = proj * x;
    return out;
}

Tensor extract_all(const FeatureExtractor& extractor, const std::vector<VideoClip>& clips) {
    const auto n = static_cast<std::int64_t>(clips.size());
    const std::int64_t d = extractor.dim();
    Tensor out({n, d});
    parallel_for(n, [&](std::int64_t i) {
        Tensor f = extractor.extract(clips[static_cast<std::size_t>(i)]);
        if (f.numel() != d) throw ShapeError("extract_all: extractor returned the wrong dimension");
        std::copy_n(f.data(), d, out.data() + i * d);
    });
    return out;
}

PerceptualNet::PerceptualNet(std::uint64_t seed, std::vector<std::int64_t> channels, std::int64_t in_channels) {
    if (channels.empty()) throw ConfigError("PerceptualNet: at least one layer required");
    Rng rng = Rng::derive(seed, 0x9e7c);
    std::int64_t in = in_channels;
    for (std::int64_t out : channels) {
        if (out < 1) throw ConfigError("PerceptualNet: channel counts must be positive");
        const Real std = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(in * 9)));
        weights_.push_back(rng.normal_tensor({out, in, 3, 3}, std));
        biases_.push_back(rng.normal_tensor({out}, 0.1f));
        in = out;
    }
}

std::vector<Tensor> PerceptualNet::layers(const Tensor& frame) const {
    if (frame.rank() != 3) throw ShapeError("PerceptualNet: frame must be [C, H, W]");
    NoGradGuard guard;
    Variable x(frame.reshaped({1, frame.dim(0), 1, frame.dim(1), frame.dim(2)}));
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Tensor& w = weights_[l];
        Variable wv(w.reshaped({w.dim(0), w.dim(1), 1, 3, 3}));
        const std::int64_t s = l == 0 ? 1 : 2;
        Tensor y = ops::causal_conv3d(x, wv, Variable(biases_[l]), {1, s, s}).value();
        for (auto& v : y.values()) v = std::max(v, Real(0));
        out.push_back(y.reshaped({y.dim(1), y.dim(3), y.dim(4)}));
        x = Variable(std::move(y));
    }
    return out;
}

double perceptual_patch_distance(const VideoClip& x, const VideoClip& y, const PerceptualNet& net) {
    require_same_shape(x.data, y.data, "perceptual_patch_distance");
    if (x.data.rank() != 4) throw ShapeError("perceptual_patch_distance: clips must be [C, T, H, W]");
    const std::int64_t frames = x.frames(), c = x.channels(), hw = x.frame_size();
    double total = 0;
    for (std::int64_t t = 0; t < frames; ++t) {
        Tensor fx({c, x.height(), x.width()}), fy({c, x.height(), x.width()});
        for (std::int64_t ch = 0; ch < c; ++ch) {
            std::copy_n(x.data.data() + (ch * frames + t) * hw, hw, fx.data() + ch * hw);
            std::copy_n(y.data.data() + (ch * frames + t) * hw, hw, fy.data() + ch * hw);
        }
        const auto lx = net.layers(fx), ly = net.layers(fy);
        for (std::size_t l = 0; l < lx.size(); ++l) {
            const std::int64_t cl = lx[l].dim(0), pos = lx[l].dim(1) * lx[l].dim(2);
            double layer = 0;
            for (std::int64_t p = 0; p < pos; ++p) {
                double nx = 0, ny = 0;
                for (std::int64_t k = 0; k < cl; ++k) {
                    nx += static_cast<double>(lx[l][k * pos + p]) * lx[l][k * pos + p];
                    ny += static_cast<double>(ly[l][k * pos + p]) * ly[l][k * pos + p];
                }
                nx = std::sqrt(nx) + kUnitNormEpsilon;
                ny = std::sqrt(ny) + kUnitNormEpsilon;
                for (std::int64_t k = 0; k < cl; ++k) {
                    const double d = lx[l][k * pos + p] / nx - ly[l][k * pos + p] / ny;
                    layer += d * d;
                }
            }
            total += layer / static_cast<double>(pos);
        }
    }
    return total / static_cast<double>(frames);
}

TextSimilarity report_similarity(const std::vector<std::int64_t>& candidate,
                                 const std::vector<std::int64_t>& reference, const Tensor& table) {
    if (table.rank() != 2) throw ShapeError("report_similarity: embedding table must be [V, d]");
    const std::int64_t v = table.dim(0), d = table.dim(1);
    auto check = [&](const std::vector<std::int64_t>& ids) {
        for (auto id : ids)
            if (id < 0 || id >= v) throw ShapeError("report_similarity: token id " + std::to_string(id) + " out of range");
    };
    check(candidate);
    check(reference);
    TextSimilarity out;
    if (candidate.empty() || reference.empty()) return out;
    auto best = [&](const std::vector<std::int64_t>& from, const std::vector<std::int64_t>& to) {
        double total = 0;
        for (auto a : from) {
            double m = -1.0;
            for (auto b : to) m = std::max(m, cosine(table.data() + a * d, table.data() + b * d, d));
            total += m;
        }
        return total / static_cast<double>(from.size());
    };
    out.precision = best(candidate, reference);
    out.recall = best(reference, candidate);
    const double s = out.precision + out.recall;
    out.f1 = s == 0 ? 0 : 2 * out.precision * out.recall / s;
    return out;
}

double recall_at_k(const Tensor& gen, const Tensor& gt, std::int64_t k) {
    if (gen.rank() != 2 || gt.rank() != 2) throw ShapeError("recall_at_k: features must be [N, D]");
    require_same_shape(gen, gt, "recall_at_k");
    const std::int64_t n = gen.dim(0), d = gen.dim(1);
    if (n < 1) throw ShapeError("recall_at_k: empty feature set");
    if (k < 1 || k > n) throw ConfigError("recall_at_k: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
    std::int64_t hits = 0;
    std::vector<double> sim(static_cast<std::size_t>(n));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j)
            sim[static_cast<std::size_t>(j)] = cosine(gen.data() + i * d, gt.data() + j * d, d);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
            return sim[static_cast<std::size_t>(a)] > sim[static_cast<std::size_t>(b)];
        });
        for (std::int64_t r = 0; r < k; ++r)
            if (order[static_cast<std::size_t>(r)] == i) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

double binomial_upper_tail(std::int64_t successes, std::int64_t trials, double p) {
    if (trials < 0 || successes < 0) throw ConfigError("binomial_upper_tail: negative count");
    if (successes > trials) return 0.0;
    if (successes == 0) return 1.0;
    double total = 0;
    for (std::int64_t k = successes; k <= trials; ++k) {
        const double log_term = std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) +
                                k * std::log(p) + (trials - k) * std::log1p(-p);
        total += std::exp(log_term);
    }
    return std::min(total, 1.0);
}

}  // namespace angiodit::eval
