#include "massub/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

namespace massub {
namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fixed(double v, int digits) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_report_csv(const ReplicationReport& report, std::ostream& out) {
  out << "estimator,coordinate,bias,msd,rmse,esd\n";
  for (const auto& s : report.estimators) {
    for (Eigen::Index j = 0; j < s.bias.size(); ++j) {
      out << s.label << ',' << (j + 1) << ',' << format_number(s.bias[j]) << ','
          << format_number(s.msd[j]) << ',' << format_number(s.rmse[j]) << ','
          << format_number(s.esd[j]) << '\n';
    }
  }
}

void write_timings_csv(const std::vector<TimingRow>& rows, std::ostream& out) {
  out << "estimator,median_seconds,runs\n";
  for (const auto& r : rows) {
    out << r.label << ',' << format_number(r.median_seconds) << ',' << r.runs << '\n';
  }
}

void write_timings_csv(const ReplicationReport& report, std::ostream& out) {
  out << "estimator,mean_seconds,replications\n";
  for (const auto& s : report.estimators) {
    out << s.label << ',' << format_number(s.mean_seconds) << ',' << s.successes << '\n';
  }
}

void write_rmse_svg(const std::vector<RmsePoint>& points, std::ostream& out) {
  // label -> (n, total rmse)
  std::map<std::string, std::vector<std::pair<double, double>>> lines;
  std::vector<std::string> order;
  double nmin = INFINITY, nmax = -INFINITY, ymax = 0.0;
  for (const auto& pt : points) {
    for (const auto& s : pt.report.estimators) {
      const double total = std::sqrt(s.rmse.squaredNorm());
      if (!lines.count(s.label)) order.push_back(s.label);
      lines[s.label].emplace_back(pt.n, total);
      nmin = std::min(nmin, pt.n);
      nmax = std::max(nmax, pt.n);
      ymax = std::max(ymax, total);
    }
  }
  const double W = 720, H = 440, left = 70, right = 190, top = 30, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  if (!(nmax > nmin)) nmax = nmin + 1.0;
  if (!(ymax > 0.0)) ymax = 1.0;
  auto sx = [&](double n) { return left + (n - nmin) / (nmax - nmin) * pw; };
  auto sy = [&](double y) { return top + ph - y / (ymax * 1.05) * ph; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
      << top + ph << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = ymax * 1.05 * k / 4.0;
    out << "<text x=\"" << left - 8 << "\" y=\"" << fixed(sy(y) + 4, 1)
        << "\" text-anchor=\"end\">" << fixed(y, 3) << "</text>\n";
  }
  for (const auto& pt : points) {
    out << "<text x=\"" << fixed(sx(pt.n), 1) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\">" << format_number(pt.n) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\">subsample size n</text>\n";
  out << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\">RMSE</text>\n";

  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& pts = lines[order[i]];
    const char* colour = kPalette[i % std::size(kPalette)];
    const char* dash = i < std::size(kPalette) ? "" : " stroke-dasharray=\"5,3\"";
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash
        << " points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) out << ' ';
      out << fixed(sx(pts[k].first), 1) << ',' << fixed(sy(pts[k].second), 1);
    }
    out << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i) + 6;
    out << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 32
        << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash << "/>\n";
    out << "<text x=\"" << W - right + 38 << "\" y=\"" << ly + 4 << "\">" << order[i] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace massub
