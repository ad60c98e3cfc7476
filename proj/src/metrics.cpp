#include "s2v/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "s2v/errors.hpp"
#include "s2v/ops.hpp"
#include "s2v/strings.hpp"

namespace s2v::metrics {

namespace {

void require_same_shape(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
  }
}

}  // namespace

void SsimConfig::validate() const {
  if (window == 0 || window % 2 == 0) throw ConfigError("ssim window must be odd and positive");
  if (!(c1 > 0) || !(c2 > 0)) throw ConfigError("ssim constants c1, c2 must be positive");
}

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("loss weights must be non-negative");
  if (lambda1 == 0 && lambda2 == 0) throw ConfigError("loss weights must not both be zero");
}

Tensor mse(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mse");
  const auto d = ops::sub(x, y);
  return ops::mean(ops::mul(d, d));
}

Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  require_same_shape(x, y, "ssim");
  cfg.validate();
  if (x.rank() != 3) throw DimensionError("ssim: expects [D,H,W], got " + shape_str(x.shape()));
  const std::size_t d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];

  Tensor xs = x, ys = y;
  std::size_t window = cfg.window, axes = 2;
  switch (cfg.mode) {
    case SsimMode::kSlidingMean:
      if (window > h || window > w) {
        throw ConfigError("ssim window " + std::to_string(window) + " exceeds slice " +
                          std::to_string(h) + "x" + std::to_string(w));
      }
      break;
    case SsimMode::kGlobal:
      xs = ops::reshape(x, {d, h * w});
      ys = ops::reshape(y, {d, h * w});
      window = h * w;
      axes = 1;
      break;
    case SsimMode::kSliding3d:
      if (window > d || window > h || window > w) {
        throw ConfigError("ssim window " + std::to_string(window) + " exceeds volume " +
                          shape_str(x.shape()));
      }
      axes = 3;
      break;
  }
  auto local = [&](const Tensor& t) { return ops::box_mean(t, window, axes); };
  const auto mx = local(xs), my = local(ys);
  const auto mxx = local(ops::mul(xs, xs)), myy = local(ops::mul(ys, ys));
  const auto mxy = local(ops::mul(xs, ys));
  const auto mx_my = ops::mul(mx, my);
  const auto mx2 = ops::mul(mx, mx), my2 = ops::mul(my, my);
  const auto sxy = ops::sub(mxy, mx_my);
  const auto sxx = ops::sub(mxx, mx2), syy = ops::sub(myy, my2);
  const auto num = ops::mul(ops::add_scalar(ops::scale(mx_my, 2.0), cfg.c1),
                            ops::add_scalar(ops::scale(sxy, 2.0), cfg.c2));
  const auto den = ops::mul(ops::add_scalar(ops::add(mx2, my2), cfg.c1),
                            ops::add_scalar(ops::add(sxx, syy), cfg.c2));
  // Every slice contributes the same number of windows, so the mean of the
  // whole map equals the mean over slices of per-slice means.
  return ops::mean(ops::div(num, den));
}

Tensor hybrid_loss(const Tensor& x, const Tensor& y, const LossWeights& w,
                   const SsimConfig& cfg) {
  w.validate();
  const auto structural = ops::add_scalar(ops::scale(ssim(x, y, cfg), -1.0), 1.0);
  return ops::add(ops::scale(structural, w.lambda1), ops::scale(mse(x, y), w.lambda2));
}

double psnr_from_mse(double mse, double max_val) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Tensor& x, const Tensor& y, double max_val) {
  NoGradScope no_grad;
  return psnr_from_mse(mse(x, y).item(), max_val);
}

SsimMode parse_ssim_mode(const std::string& s) {
  if (s == "sliding") return SsimMode::kSlidingMean;
  if (s == "global") return SsimMode::kGlobal;
  if (s == "sliding3d") return SsimMode::kSliding3d;
  throw ConfigError("ssim mode must be one of sliding, global, sliding3d; got '" + s + "'");
}

std::string ssim_mode_name(SsimMode m) {
  switch (m) {
    case SsimMode::kGlobal: return "global";
    case SsimMode::kSliding3d: return "sliding3d";
    default: return "sliding";
  }
}

MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw DataError("mean_std: no values");
  std::size_t infinite = 0;
  for (double x : v) infinite += std::isinf(x) ? 1 : 0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (infinite != 0) return {kInf, infinite == v.size() ? 0.0 : kInf};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

std::vector<ReportRow> summarize(const std::vector<SampleScore>& scores) {
  if (scores.empty()) throw DataError("evaluation produced no samples");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<double> all_ssim, all_psnr;
  for (const auto& s : scores) {
    if (!groups.count(s.subject)) order.push_back(s.subject);
    groups[s.subject].first.push_back(s.ssim);
    groups[s.subject].second.push_back(s.psnr);
    all_ssim.push_back(s.ssim);
    all_psnr.push_back(s.psnr);
  }
  std::vector<ReportRow> rows;
  for (const auto& id : order) {
    const auto& g = groups[id];
    rows.push_back({id, g.first.size(), mean_std(g.first), mean_std(g.second)});
  }
  rows.push_back({"all", scores.size(), mean_std(all_ssim), mean_std(all_psnr)});
  return rows;
}

std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "subject,n_samples,ssim_mean,ssim_std,psnr_mean,psnr_std\n";
  for (const auto& r : rows) {
    os << r.subject << ',' << r.n_samples << ',' << strings::format_double(r.ssim.mean) << ','
       << strings::format_double(r.ssim.std) << ',' << strings::format_double(r.psnr.mean) << ','
       << strings::format_double(r.psnr.std) << '\n';
  }
  return os.str();
}

std::string format_report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %9s  %-19s  %-19s\n", "subject", "samples", "SSIM",
                "PSNR (dB)");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-12s %9zu  %.4f +/- %-8.4f  %.3f +/- %.3f\n",
                  r.subject.c_str(), r.n_samples, r.ssim.mean, r.ssim.std, r.psnr.mean,
                  r.psnr.std);
    os << line;
  }
  return os.str();
}

}  // namespace s2v::metrics
