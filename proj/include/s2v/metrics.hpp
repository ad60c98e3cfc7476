#pragma once

// Image-quality metrics and the training objective
//   loss = lambda1 * (1 - SSIM) + lambda2 * MSE.
// SSIM uses uniform windows on each axial slice of a [D,H,W] volume.

#include <cstddef>
#include <string>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v::metrics {

enum class SsimMode { kSlidingMean, kGlobal, kSliding3d };

struct SsimConfig {
  std::size_t window = 7;
  double c1 = 1e-4;  // (0.01 * max)^2
  double c2 = 9e-4;  // (0.03 * max)^2
  SsimMode mode = SsimMode::kSlidingMean;

  void validate() const;
};

struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 0.5;

  void validate() const;
};

Tensor mse(const Tensor& x, const Tensor& y);
Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});
Tensor hybrid_loss(const Tensor& x, const Tensor& y, const LossWeights& w,
                   const SsimConfig& cfg = {});

// +infinity when mse == 0.
double psnr_from_mse(double mse, double max_val = 1.0);
double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0);

SsimMode parse_ssim_mode(const std::string& s);
std::string ssim_mode_name(SsimMode m);

// Population mean and standard deviation. Infinite entries (PSNR of perfect
// predictions) give mean +inf; std is 0 when every entry is infinite and
// +inf when only some are.
struct MeanStd {
  double mean = 0;
  double std = 0;
};
MeanStd mean_std(const std::vector<double>& v);

struct SampleScore {
  std::string subject;
  double ssim = 0;
  double psnr = 0;
};

struct ReportRow {
  std::string subject;  // "all" for the pooled row
  std::size_t n_samples = 0;
  MeanStd ssim;
  MeanStd psnr;
};

// One row per subject in first-appearance order, then the pooled row.
std::vector<ReportRow> summarize(const std::vector<SampleScore>& scores);
std::string format_report_csv(const std::vector<ReportRow>& rows);
std::string format_report_text(const std::vector<ReportRow>& rows);

}  // namespace s2v::metrics
