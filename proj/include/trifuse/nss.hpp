#pragma once

#include <string>
#include <vector>

#include "trifuse/image.hpp"

namespace trifuse {

// Natural-scene-statistics features shared by NIQE and BRISQUE: MSCN
// normalization (7x7 Gaussian, sigma 7/6, C = 1/255, replicate border),
// asymmetric generalized Gaussian fits of the coefficients and their four
// directional pairwise products, at two dyadic scales. 18 features per
// scale, 36 total.

struct AggdParams {
    double alpha = 1.0;
    double left_sigma = 0.0;
    double right_sigma = 0.0;
    double mean = 0.0;  // eta of the asymmetric fit
};

// Moment-matching fit over a coefficient sample; degenerate (near-constant)
// input yields a finite, pinned parameter set rather than NaNs.
AggdParams fit_aggd(const std::vector<double>& x);

// 36-dim feature vector of the whole image (grayscale conversion applied
// internally).
std::vector<double> nss_features(const ImageTensor& img);

struct NiqeModel {
    int patch = 96;
    double sharpness_threshold = 0.75;  // fraction of the per-image peak
    std::vector<double> mean;           // 36
    std::vector<double> cov;            // 36 x 36, row-major
};

// Fits the pristine multivariate-Gaussian model over sharpness-selected
// patches (local-variance peak fraction given by sharpness_threshold).
NiqeModel fit_niqe_model(const std::vector<ImageTensor>& pristine, int patch = 96,
                         double sharpness_threshold = 0.75);

// Distance between the test image's patch-feature Gaussian and the pristine
// model, using the averaged covariance's pseudo-inverse.
double niqe(const ImageTensor& img, const NiqeModel& model);

std::vector<double> brisque_features(const ImageTensor& img);

struct BrisqueRegressor {
    std::vector<double> w;  // 36
    double b = 0.0;
};

// Linear regressor when supplied; otherwise the documented fallback scores
// by Mahalanobis distance to a fitted pristine model. One of the two must be
// present.
double brisque_score(const ImageTensor& img, const BrisqueRegressor* regressor,
                     const NiqeModel* fallback);

// TRIF-container persistence (entries "mean", "cov", "patch", "threshold";
// regressor files use "reg_w", "reg_b").
void save_niqe_model(const std::string& path, const NiqeModel& model);
NiqeModel load_niqe_model(const std::string& path);
void save_brisque_regressor(const std::string& path, const BrisqueRegressor& reg);
BrisqueRegressor load_brisque_regressor(const std::string& path);

}  // namespace trifuse
