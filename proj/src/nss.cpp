#include "trifuse/nss.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include "trifuse/checkpoint.hpp"
#include "trifuse/common.hpp"

namespace trifuse {

namespace {

constexpr int kFeatureDim = 36;
constexpr double kMscnC = 1.0 / 255.0;

struct Plane {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane gray_plane(const ImageTensor& img) {
    ImageTensor g = to_gray(img);
    Plane p;
    p.h = g.height;
    p.w = g.width;
    p.v.assign(g.data.begin(), g.data.end());
    return p;
}

// 7-tap Gaussian, sigma = 7/6, normalized to unit sum.
const std::array<double, 7>& gaussian_kernel() {
    static const std::array<double, 7> k = [] {
        std::array<double, 7> out{};
        const double sigma = 7.0 / 6.0;
        double sum = 0.0;
        for (int i = -3; i <= 3; ++i) {
            out[i + 3] = std::exp(-0.5 * (i * i) / (sigma * sigma));
            sum += out[i + 3];
        }
        for (double& v : out) v /= sum;
        return out;
    }();
    return k;
}

// Separable filtering with replicate borders.
Plane filter_gaussian(const Plane& src) {
    const auto& k = gaussian_kernel();
    Plane tmp{src.h, src.w, std::vector<double>(src.v.size())};
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = -3; i <= 3; ++i) {
                int xx = std::clamp(x + i, 0, src.w - 1);
                acc += k[i + 3] * src.at(y, xx);
            }
            tmp.at(y, x) = acc;
        }
    }
    Plane out{src.h, src.w, std::vector<double>(src.v.size())};
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = -3; i <= 3; ++i) {
                int yy = std::clamp(y + i, 0, src.h - 1);
                acc += k[i + 3] * tmp.at(yy, x);
            }
            out.at(y, x) = acc;
        }
    }
    return out;
}

struct MscnField {
    Plane mscn;
    Plane sigma;  // local standard deviation before stabilization
};

MscnField compute_mscn(const Plane& gray) {
    Plane mu = filter_gaussian(gray);
    Plane sq{gray.h, gray.w, std::vector<double>(gray.v.size())};
    for (std::size_t i = 0; i < gray.v.size(); ++i) sq.v[i] = gray.v[i] * gray.v[i];
    Plane musq = filter_gaussian(sq);

    MscnField f;
    f.mscn = Plane{gray.h, gray.w, std::vector<double>(gray.v.size())};
    f.sigma = Plane{gray.h, gray.w, std::vector<double>(gray.v.size())};
    for (std::size_t i = 0; i < gray.v.size(); ++i) {
        double var = std::max(musq.v[i] - mu.v[i] * mu.v[i], 0.0);
        double sd = std::sqrt(var);
        f.sigma.v[i] = sd;
        f.mscn.v[i] = (gray.v[i] - mu.v[i]) / (sd + kMscnC);
    }
    return f;
}

Plane downsample2_plane(const Plane& src) {
    Plane out{src.h / 2, src.w / 2, {}};
    out.v.resize(static_cast<std::size_t>(out.h) * out.w);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            out.at(y, x) = 0.25 * (src.at(2 * y, 2 * x) + src.at(2 * y, 2 * x + 1) +
                                   src.at(2 * y + 1, 2 * x) + src.at(2 * y + 1, 2 * x + 1));
        }
    }
    return out;
}

// Precomputed r(gamma) = Gamma(2/g)^2 / (Gamma(1/g) * Gamma(3/g)) lookup used
// by the moment-matching fit, gamma in [0.2, 10] step 0.001.
const std::vector<std::pair<double, double>>& gamma_lookup() {
    static const std::vector<std::pair<double, double>> table = [] {
        std::vector<std::pair<double, double>> t;
        t.reserve(9801);
        for (int i = 0; i <= 9800; ++i) {
            double g = 0.2 + 0.001 * i;
            double r = std::tgamma(2.0 / g) * std::tgamma(2.0 / g) /
                       (std::tgamma(1.0 / g) * std::tgamma(3.0 / g));
            t.emplace_back(g, r);
        }
        return t;
    }();
    return table;
}

}  // namespace

AggdParams fit_aggd(const std::vector<double>& x) {
    const std::size_t n = x.size();
    AggdParams out{2.0, 0.0, 0.0, 0.0};
    if (n == 0) return out;

    double neg_sq = 0.0, pos_sq = 0.0, abs_sum = 0.0, sq_sum = 0.0;
    std::size_t n_neg = 0, n_pos = 0;
    for (double v : x) {
        if (v < 0.0) {
            neg_sq += v * v;
            ++n_neg;
        } else if (v > 0.0) {
            pos_sq += v * v;
            ++n_pos;
        }
        abs_sum += std::abs(v);
        sq_sum += v * v;
    }
    const double mean_sq = sq_sum / static_cast<double>(n);
    if (mean_sq < 1e-12) return out;  // near-zero energy: pinned finite default

    double left_sd = n_neg ? std::sqrt(neg_sq / static_cast<double>(n_neg)) : 0.0;
    double right_sd = n_pos ? std::sqrt(pos_sq / static_cast<double>(n_pos)) : 0.0;
    double gamma_hat = left_sd / std::max(right_sd, 1e-12);
    double mean_abs = abs_sum / static_cast<double>(n);
    double r_hat = (mean_abs * mean_abs) / mean_sq;
    double r_hat_norm = r_hat * (gamma_hat * gamma_hat * gamma_hat + 1.0) * (gamma_hat + 1.0) /
                        ((gamma_hat * gamma_hat + 1.0) * (gamma_hat * gamma_hat + 1.0));

    double best_gamma = 2.0;
    double best_err = std::numeric_limits<double>::infinity();
    for (const auto& [g, r] : gamma_lookup()) {
        double err = (r - r_hat_norm) * (r - r_hat_norm);
        if (err < best_err) {
            best_err = err;
            best_gamma = g;
        }
    }

    out.alpha = best_gamma;
    out.left_sigma = left_sd;
    out.right_sigma = right_sd;
    double g1 = std::tgamma(1.0 / best_gamma);
    double g2 = std::tgamma(2.0 / best_gamma);
    double g3 = std::tgamma(3.0 / best_gamma);
    out.mean = (right_sd - left_sd) * std::sqrt(g1 / g3) * (g2 / g1);
    return out;
}

namespace {

// 18 features of a rectangular MSCN region: symmetric fit of the
// coefficients (alpha, mean sigma^2) plus an asymmetric fit per pairwise
// product orientation (alpha, eta, left/right sigma^2).
void region_features(const Plane& mscn, int y0, int x0, int ph, int pw,
                     std::vector<double>& out) {
    std::vector<double> coeffs;
    coeffs.reserve(static_cast<std::size_t>(ph) * pw);
    for (int y = y0; y < y0 + ph; ++y)
        for (int x = x0; x < x0 + pw; ++x) coeffs.push_back(mscn.at(y, x));
    AggdParams m = fit_aggd(coeffs);
    out.push_back(m.alpha);
    out.push_back(0.5 * (m.left_sigma * m.left_sigma + m.right_sigma * m.right_sigma));

    static constexpr int kOffsets[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};  // H, V, D1, D2
    std::vector<double> prods;
    for (const auto& off : kOffsets) {
        prods.clear();
        for (int y = y0; y < y0 + ph; ++y) {
            int yy = y + off[0];
            if (yy >= y0 + ph) continue;
            for (int x = x0; x < x0 + pw; ++x) {
                int xx = x + off[1];
                if (xx < x0 || xx >= x0 + pw) continue;
                prods.push_back(mscn.at(y, x) * mscn.at(yy, xx));
            }
        }
        AggdParams p = fit_aggd(prods);
        out.push_back(p.alpha);
        out.push_back(p.mean);
        out.push_back(p.left_sigma * p.left_sigma);
        out.push_back(p.right_sigma * p.right_sigma);
    }
}

// Mean/covariance of feature rows; sample covariance (n-1 denominator when
// n > 1).
void fit_gaussian(const std::vector<std::vector<double>>& rows, std::vector<double>& mean,
                  std::vector<double>& cov) {
    const std::size_t n = rows.size();
    mean.assign(kFeatureDim, 0.0);
    cov.assign(static_cast<std::size_t>(kFeatureDim) * kFeatureDim, 0.0);
    for (const auto& r : rows)
        for (int i = 0; i < kFeatureDim; ++i) mean[i] += r[i];
    for (int i = 0; i < kFeatureDim; ++i) mean[i] /= static_cast<double>(n);
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (const auto& r : rows) {
        for (int i = 0; i < kFeatureDim; ++i) {
            double di = r[i] - mean[i];
            for (int j = i; j < kFeatureDim; ++j) {
                cov[static_cast<std::size_t>(i) * kFeatureDim + j] += di * (r[j] - mean[j]) / denom;
            }
        }
    }
    for (int i = 0; i < kFeatureDim; ++i)
        for (int j = 0; j < i; ++j)
            cov[static_cast<std::size_t>(i) * kFeatureDim + j] =
                cov[static_cast<std::size_t>(j) * kFeatureDim + i];
}

double gaussian_distance(const std::vector<double>& mean_a, const std::vector<double>& mean_b,
                         const std::vector<double>& cov) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> sigma(cov.data(), kFeatureDim, kFeatureDim);
    Mat pinv = Eigen::CompleteOrthogonalDecomposition<Mat>(sigma).pseudoInverse();
    Eigen::VectorXd d(kFeatureDim);
    for (int i = 0; i < kFeatureDim; ++i) d[i] = mean_a[i] - mean_b[i];
    double q = d.dot(pinv * d);
    return std::sqrt(std::max(q, 0.0));
}

void validate_niqe_model(const NiqeModel& model) {
    require(model.patch >= 8 && model.patch % 2 == 0,
            "niqe model patch size must be an even value >= 8");
    require(model.mean.size() == kFeatureDim, "niqe model mean must have 36 entries");
    require(model.cov.size() == static_cast<std::size_t>(kFeatureDim) * kFeatureDim,
            "niqe model covariance must be 36x36");
    require(model.sharpness_threshold >= 0.0 && model.sharpness_threshold <= 1.0,
            "niqe sharpness threshold must lie in [0, 1]");
}

// Feature rows for every full patch of the image; when `selected` is given,
// only patches whose mean local deviation reaches the per-image sharpness
// threshold contribute.
std::vector<std::vector<double>> patch_feature_rows(const Plane& gray, int patch,
                                                    const double* sharpness_frac) {
    MscnField f1 = compute_mscn(gray);
    Plane half = downsample2_plane(gray);
    MscnField f2 = compute_mscn(half);

    const int ny = gray.h / patch;
    const int nx = gray.w / patch;
    std::vector<double> sharp(static_cast<std::size_t>(ny) * nx, 0.0);
    double peak = 0.0;
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            double acc = 0.0;
            for (int y = i * patch; y < (i + 1) * patch; ++y)
                for (int x = j * patch; x < (j + 1) * patch; ++x) acc += f1.sigma.at(y, x);
            double s = acc / (static_cast<double>(patch) * patch);
            sharp[static_cast<std::size_t>(i) * nx + j] = s;
            peak = std::max(peak, s);
        }
    }

    std::vector<std::vector<double>> rows;
    if (sharpness_frac != nullptr && peak <= 1e-9) return rows;  // flat image: nothing usable
    const double cutoff = sharpness_frac ? (*sharpness_frac) * peak : -1.0;
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            if (sharp[static_cast<std::size_t>(i) * nx + j] < cutoff) continue;
            std::vector<double> row;
            row.reserve(kFeatureDim);
            region_features(f1.mscn, i * patch, j * patch, patch, patch, row);
            region_features(f2.mscn, i * patch / 2, j * patch / 2, patch / 2, patch / 2, row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace

std::vector<double> nss_features(const ImageTensor& img) {
    validate_image(img);
    require(img.height >= 8 && img.width >= 8, "image too small for NSS features (need >= 8x8)");
    Plane gray = gray_plane(img);
    MscnField f1 = compute_mscn(gray);
    Plane half = downsample2_plane(gray);
    MscnField f2 = compute_mscn(half);
    std::vector<double> out;
    out.reserve(kFeatureDim);
    region_features(f1.mscn, 0, 0, gray.h, gray.w, out);
    region_features(f2.mscn, 0, 0, half.h, half.w, out);
    return out;
}

NiqeModel fit_niqe_model(const std::vector<ImageTensor>& pristine, int patch,
                         double sharpness_threshold) {
    require(pristine.size() >= 10, "niqe fit requires at least 10 pristine images");
    require(patch >= 8 && patch % 2 == 0, "niqe patch size must be an even value >= 8");
    require(sharpness_threshold >= 0.0 && sharpness_threshold <= 1.0,
            "niqe sharpness threshold must lie in [0, 1]");

    std::vector<std::vector<double>> rows;
    for (const ImageTensor& img : pristine) {
        validate_image(img);
        require(img.height >= patch && img.width >= patch,
                "pristine image smaller than the niqe patch size");
        Plane gray = gray_plane(img);
        auto img_rows = patch_feature_rows(gray, patch, &sharpness_threshold);
        for (auto& r : img_rows) rows.push_back(std::move(r));
    }
    require(rows.size() >= 2, "niqe fit found too few usable patches (corpus too flat)");

    NiqeModel model;
    model.patch = patch;
    model.sharpness_threshold = sharpness_threshold;
    fit_gaussian(rows, model.mean, model.cov);
    return model;
}

double niqe(const ImageTensor& img, const NiqeModel& model) {
    validate_niqe_model(model);
    validate_image(img);
    require(img.height >= model.patch && img.width >= model.patch,
            "image smaller than the niqe patch size");
    Plane gray = gray_plane(img);
    auto rows = patch_feature_rows(gray, model.patch, nullptr);
    require(rows.size() >= 2, "niqe requires an image spanning at least 2 patches");

    std::vector<double> mean_t, cov_t;
    fit_gaussian(rows, mean_t, cov_t);
    std::vector<double> cov_avg(cov_t.size());
    for (std::size_t i = 0; i < cov_avg.size(); ++i) cov_avg[i] = 0.5 * (model.cov[i] + cov_t[i]);
    return gaussian_distance(model.mean, mean_t, cov_avg);
}

std::vector<double> brisque_features(const ImageTensor& img) { return nss_features(img); }

double brisque_score(const ImageTensor& img, const BrisqueRegressor* regressor,
                     const NiqeModel* fallback) {
    require(regressor != nullptr || fallback != nullptr,
            "brisque needs a regressor or a pristine model fallback");
    std::vector<double> f = brisque_features(img);
    if (regressor != nullptr) {
        require(regressor->w.size() == kFeatureDim, "brisque regressor must have 36 weights");
        double acc = regressor->b;
        for (int i = 0; i < kFeatureDim; ++i) acc += regressor->w[i] * f[i];
        return acc;
    }
    // Fallback: Mahalanobis distance of the image's features to the pristine
    // Gaussian; larger means more distorted.
    validate_niqe_model(*fallback);
    return gaussian_distance(f, fallback->mean, fallback->cov);
}

void save_niqe_model(const std::string& path, const NiqeModel& model) {
    validate_niqe_model(model);
    ContainerEntries entries;
    entries.emplace_back("cov",
                         ContainerEntry{{static_cast<uint32_t>(kFeatureDim),
                                         static_cast<uint32_t>(kFeatureDim)},
                                        std::vector<float>(model.cov.begin(), model.cov.end())});
    entries.emplace_back("mean",
                         ContainerEntry{{static_cast<uint32_t>(kFeatureDim)},
                                        std::vector<float>(model.mean.begin(), model.mean.end())});
    entries.emplace_back("patch",
                         ContainerEntry{{1}, {static_cast<float>(model.patch)}});
    entries.emplace_back("threshold",
                         ContainerEntry{{1}, {static_cast<float>(model.sharpness_threshold)}});
    save_container(path, entries);
}

NiqeModel load_niqe_model(const std::string& path) {
    ContainerEntries entries = load_container(path);
    auto find = [&](const std::string& name) -> const ContainerEntry* {
        for (const auto& [n, e] : entries)
            if (n == name) return &e;
        return nullptr;
    };
    const ContainerEntry* mean = find("mean");
    const ContainerEntry* cov = find("cov");
    require(mean != nullptr && cov != nullptr,
            "niqe model file is missing the \"mean\" or \"cov\" entry");
    NiqeModel model;
    model.mean.assign(mean->data.begin(), mean->data.end());
    model.cov.assign(cov->data.begin(), cov->data.end());
    if (const ContainerEntry* p = find("patch"); p != nullptr && !p->data.empty())
        model.patch = static_cast<int>(std::lround(p->data[0]));
    if (const ContainerEntry* t = find("threshold"); t != nullptr && !t->data.empty())
        model.sharpness_threshold = t->data[0];
    validate_niqe_model(model);
    return model;
}

void save_brisque_regressor(const std::string& path, const BrisqueRegressor& reg) {
    require(reg.w.size() == kFeatureDim, "brisque regressor must have 36 weights");
    ContainerEntries entries;
    entries.emplace_back("reg_b", ContainerEntry{{1}, {static_cast<float>(reg.b)}});
    entries.emplace_back("reg_w",
                         ContainerEntry{{static_cast<uint32_t>(kFeatureDim)},
                                        std::vector<float>(reg.w.begin(), reg.w.end())});
    save_container(path, entries);
}

BrisqueRegressor load_brisque_regressor(const std::string& path) {
    ContainerEntries entries = load_container(path);
    BrisqueRegressor reg;
    bool have_w = false;
    for (const auto& [name, e] : entries) {
        if (name == "reg_w") {
            reg.w.assign(e.data.begin(), e.data.end());
            have_w = true;
        } else if (name == "reg_b") {
            require(!e.data.empty(), "brisque regressor bias entry is empty");
            reg.b = e.data[0];
        }
    }
    require(have_w, "brisque regressor file is missing the \"reg_w\" entry");
    require(reg.w.size() == kFeatureDim, "brisque regressor must have 36 weights");
    return reg;
}

}  // namespace trifuse
