#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "routemlp/analysis.hpp"
#include "routemlp/errors.hpp"

namespace routemlp::analysis {
namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

const char* palette(int c) {
  static const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};
  return colors[static_cast<std::size_t>(std::max(c, 0)) % 6];
}

}  // namespace

HistogramSpec participant_loss_histogram(const std::map<std::string, double>& mean_losses,
                                         const strategies::RoutingTable& routing, int bins) {
  if (bins < 1) throw ValidationError("participant_loss_histogram: bins must be >= 1");
  if (mean_losses.empty()) throw ValidationError("participant_loss_histogram: no participants");
  double lo = mean_losses.begin()->second;
  double hi = lo;
  for (const auto& [id, loss] : mean_losses) {
    if (!std::isfinite(loss)) throw ValidationError("participant_loss_histogram: non-finite loss for " + id);
    lo = std::min(lo, loss);
    hi = std::max(hi, loss);
  }
  HistogramSpec spec;
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) spec.edges.push_back(b == bins ? hi : lo + width * b);
  for (int b = 0; b < bins; ++b) spec.bins.push_back({spec.edges[b], spec.edges[b + 1], 0, {}});
  for (const auto& [id, loss] : mean_losses) {
    const int cluster = routing.cluster(id);
    int b = width > 0.0 ? static_cast<int>(std::floor((loss - lo) / width)) : 0;
    b = std::clamp(b, 0, bins - 1);
    ++spec.bins[b].count;
    ++spec.bins[b].clusters[cluster];
    spec.cluster_of[id] = cluster;
    spec.loss_of[id] = loss;
  }
  return spec;
}

std::string histogram_csv(const HistogramSpec& spec) {
  std::ostringstream out;
  out << "bin_low,bin_high,count,cluster\n";
  for (const auto& bin : spec.bins) {
    if (bin.clusters.empty()) {
      out << num(bin.low) << ',' << num(bin.high) << ",0,\n";
      continue;
    }
    for (const auto& [cluster, count] : bin.clusters) {
      out << num(bin.low) << ',' << num(bin.high) << ',' << count << ',' << cluster << '\n';
    }
  }
  return out.str();
}

std::string histogram_svg(const HistogramSpec& spec) {
  const double w = 640, h = 360, pad = 40;
  std::size_t top = 1;
  for (const auto& b : spec.bins) top = std::max(top, b.count);
  const double bar = (w - 2 * pad) / static_cast<double>(spec.bins.size());
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < spec.bins.size(); ++i) {
    double base = h - pad;
    for (const auto& [cluster, count] : spec.bins[i].clusters) {
      const double height = (h - 2 * pad) * static_cast<double>(count) / static_cast<double>(top);
      base -= height;
      out << "<rect x=\"" << num(pad + bar * static_cast<double>(i)) << "\" y=\"" << num(base)
          << "\" width=\"" << num(bar * 0.95) << "\" height=\"" << num(height) << "\" fill=\""
          << palette(cluster) << "\"/>\n";
    }
  }
  out << "<text x=\"" << pad << "\" y=\"" << h - 10 << "\" font-size=\"12\">" << num(spec.edges.front())
      << "</text>\n";
  out << "<text x=\"" << w - pad << "\" y=\"" << h - 10 << "\" font-size=\"12\" text-anchor=\"end\">"
      << num(spec.edges.back()) << "</text>\n</svg>\n";
  return out.str();
}

std::string embedding_csv(const std::vector<EmbeddingPoint>& points) {
  std::ostringstream out;
  out << "participant_id,date,split,x,y,loss\n";
  for (const auto& p : points) {
    out << p.participant_id << ',' << p.date << ',' << p.split << ',' << num(p.x) << ',' << num(p.y)
        << ',' << num(p.loss) << '\n';
  }
  return out.str();
}

std::string embedding_svg(const std::vector<EmbeddingPoint>& points) {
  const double w = 640, h = 640, pad = 20;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1, l0 = 0, l1 = 1;
  if (!points.empty()) {
    x0 = x1 = points[0].x;
    y0 = y1 = points[0].y;
    l0 = l1 = points[0].loss;
    for (const auto& p : points) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
      l0 = std::min(l0, p.loss), l1 = std::max(l1, p.loss);
    }
  }
  const auto scale = [](double v, double a, double b) { return b > a ? (v - a) / (b - a) : 0.5; };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& p : points) {
    const double t = scale(p.loss, l0, l1);
    const int red = static_cast<int>(std::lround(255 * t));
    const int blue = 255 - red;
    out << "<" << (p.split == "test" ? "rect" : "circle");
    const double cx = pad + (w - 2 * pad) * scale(p.x, x0, x1);
    const double cy = h - pad - (h - 2 * pad) * scale(p.y, y0, y1);
    if (p.split == "test") {
      out << " x=\"" << num(cx - 3) << "\" y=\"" << num(cy - 3) << "\" width=\"6\" height=\"6\"";
    } else {
      out << " cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"3\"";
    }
    out << " fill=\"rgb(" << red << ",0," << blue << ")\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace routemlp::analysis
