#include "pgcu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pgcu/errors.hpp"

namespace pgcu {
namespace {

void check_pair(const Tensor<double>& x, const Tensor<double>& y, const char* what) {
  require(x.rank() == 3, Errc::kShape, std::string(what) + ": expected [C][H][W]");
  require(x.shape() == y.shape(), Errc::kShape,
          std::string(what) + ": shape mismatch " + shape_string(x.shape()) + " vs " +
              shape_string(y.shape()));
}

// 8 * centre - sum of the 8 neighbours, neighbours clamped to the image.
std::vector<double> laplacian(const double* img, std::size_t h, std::size_t w) {
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const std::size_t ii = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(i) + di, 0, h - 1);
          const std::size_t jj = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(j) + dj, 0, w - 1);
          acc += img[i * w + j] - img[ii * w + jj];
        }
      }
      out[i * w + j] = acc;
    }
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa == 0 || sbb == 0) return 0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double psnr(const Tensor<double>& x, const Tensor<double>& y) {
  check_pair(x, y, "psnr");
  double sse = 0;
  for (std::size_t k = 0; k < x.size(); ++k) sse += (x[k] - y[k]) * (x[k] - y[k]);
  const double mse = sse / static_cast<double>(x.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double sam(const Tensor<double>& x, const Tensor<double>& y) {
  check_pair(x, y, "sam");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  double total = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    double dot = 0, nx = 0, ny = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double a = x[ch * hw + p], b = y[ch * hw + p];
      dot += a * b;
      nx += a * a;
      ny += b * b;
    }
    if (nx == 0 || ny == 0) continue;
    const double cosine = dot / (std::sqrt(nx) * std::sqrt(ny) + kSamEps);
    total += std::acos(std::clamp(cosine, -1.0, 1.0));
  }
  return total / static_cast<double>(hw);
}

double ergas(const Tensor<double>& ref, const Tensor<double>& y, std::size_t scale) {
  check_pair(ref, y, "ergas");
  require(scale >= 1, Errc::kDomain, "ergas: scale must be >= 1");
  const std::size_t c = ref.dim(0), hw = ref.dim(1) * ref.dim(2);
  double acc = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0, sse = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double a = ref[ch * hw + p], b = y[ch * hw + p];
      mean += a;
      sse += (a - b) * (a - b);
    }
    mean /= static_cast<double>(hw);
    require(mean != 0, Errc::kDegenerateReference,
            "ergas: reference channel " + std::to_string(ch) + " has zero mean");
    const double rmse = std::sqrt(sse / static_cast<double>(hw));
    acc += (rmse / mean) * (rmse / mean);
  }
  return 100.0 / static_cast<double>(scale) * std::sqrt(acc / static_cast<double>(c));
}

std::vector<double> ssim_window() {
  constexpr std::size_t n = kSsimWindow;
  std::vector<double> g(n);
  double sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = static_cast<double>(k) - static_cast<double>(n / 2);
    g[k] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    sum += g[k];
  }
  std::vector<double> w(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) w[a * n + b] = g[a] * g[b] / (sum * sum);
  return w;
}

double ssim(const Tensor<double>& x, const Tensor<double>& y) {
  check_pair(x, y, "ssim");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), n = kSsimWindow;
  require(h >= n && w >= n, Errc::kShape,
          "ssim: image " + shape_string(x.shape()) + " is smaller than the 11x11 window");
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const std::vector<double> win = ssim_window();
  const std::size_t oh = h - n + 1, ow = w - n + 1;

  double total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xa = x.raw() + ch * h * w;
    const double* ya = y.raw() + ch * h * w;
    double channel_sum = 0;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t a = 0; a < n; ++a) {
          for (std::size_t b = 0; b < n; ++b) {
            const double wt = win[a * n + b];
            const double u = xa[(i + a) * w + j + b], v = ya[(i + a) * w + j + b];
            mx += wt * u;
            my += wt * v;
            sxx += wt * u * u;
            syy += wt * v * v;
            sxy += wt * u * v;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        channel_sum += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += channel_sum / static_cast<double>(oh * ow);
  }
  return total / static_cast<double>(c);
}

double scc(const Tensor<double>& x, const Tensor<double>& y) {
  check_pair(x, y, "scc");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  double total = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    total += pearson(laplacian(x.raw() + ch * h * w, h, w), laplacian(y.raw() + ch * h * w, h, w));
  return total / static_cast<double>(c);
}

MetricsReport evaluate_all(const Tensor<double>& ref, const Tensor<double>& y,
                           std::size_t scale) {
  return {sam(ref, y), ergas(ref, y, scale), ssim(ref, y), scc(ref, y), psnr(ref, y)};
}

MetricsReport evaluate_all(const MSImage& ref, const MSImage& y, std::size_t scale) {
  return evaluate_all(ref.tensor(), y.tensor(), scale);
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
  if (reports.empty()) return {};
  MetricsReport m{0, 0, 0, 0, 0};
  for (const auto& r : reports) {
    m.sam += r.sam;
    m.ergas += r.ergas;
    m.ssim += r.ssim;
    m.scc += r.scc;
    m.psnr += r.psnr;
  }
  const double n = static_cast<double>(reports.size());
  return {m.sam / n, m.ergas / n, m.ssim / n, m.scc / n, m.psnr / n};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"sam", r.sam}, {"ergas", r.ergas}, {"ssim", r.ssim}, {"scc", r.scc},
                     {"psnr", r.psnr}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("sam").get_to(r.sam);
  j.at("ergas").get_to(r.ergas);
  j.at("ssim").get_to(r.ssim);
  j.at("scc").get_to(r.scc);
  j.at("psnr").get_to(r.psnr);
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"sam", "ergas", "ssim", "scc", "psnr"};
  return names;
}

double metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "sam") return r.sam;
  if (name == "ergas") return r.ergas;
  if (name == "ssim") return r.ssim;
  if (name == "scc") return r.scc;
  if (name == "psnr") return r.psnr;
  fail(Errc::kConfig, "unknown metric '" + name + "'");
}

bool higher_is_better(const std::string& name) {
  return name == "psnr" || name == "ssim" || name == "scc";
}

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                         const std::string& label_header) {
  const auto& names = metric_names();
  std::vector<std::size_t> best(names.size(), 0);
  for (std::size_t m = 0; m < names.size(); ++m) {
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const double a = metric_value(rows[r].second, names[m]);
      const double b = metric_value(rows[best[m]].second, names[m]);
      if (higher_is_better(names[m]) ? a > b : a < b) best[m] = r;
    }
  }
  std::size_t label_width = label_header.size();
  for (const auto& row : rows) label_width = std::max(label_width, row.first.size());

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << label_header;
  for (const auto& name : names) {
    std::string head = name;
    std::transform(head.begin(), head.end(), head.begin(), ::toupper);
    head += higher_is_better(name) ? "↑" : "↓";
    // The arrow is three bytes but one column wide.
    os << "  " << std::right << std::setw(12) << head;
  }
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(label_width)) << rows[r].first;
    for (std::size_t m = 0; m < names.size(); ++m) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(names[m] == "psnr" ? 3 : 4)
           << metric_value(rows[r].second, names[m]) << (best[m] == r && rows.size() > 1 ? "*" : " ");
      os << "  " << std::right << std::setw(10) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pgcu
