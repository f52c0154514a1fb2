#pragma once

// Minimal deterministic SVG line/scatter plots. Every number is written with
// a fixed number of decimals so output bytes depend only on the input.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftlab/error.hpp"
#include "driftlab/records.hpp"

namespace driftlab::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

enum class PlotKind { kLine, kScatter };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "line") return PlotKind::kLine;
  if (s == "scatter") return PlotKind::kScatter;
  throw ArgumentError("unknown plot kind '" + s + "' (expected line|scatter)");
}

struct PlotSpec {
  std::string title;
  std::string x_label = "x";
  std::string y_label = "y";
  PlotKind kind = PlotKind::kLine;
  bool log_x = false;
  int width = 640;
  int height = 420;
};

namespace detail {

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % 8];
}

inline std::string fixed(double v, int decimals = 2) {
  if (v == 0.0) v = 0.0;  // no "-0.00"
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
  std::string s(buf, res.ptr);
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string tick(double v) {
  if (std::abs(v) < 1e-12) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 4);
  return std::string(buf, res.ptr);
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render(const PlotSpec& spec, const std::vector<Series>& series) {
  using detail::fixed;
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double w = spec.width, h = spec.height;
  const double pw = w - left - right, ph = h - top - bottom;

  auto tx = [&](double x) {
    if (!spec.log_x) return x;
    if (!(x > 0.0)) throw ArgumentError("svg: log_x needs positive x values");
    return std::log10(x);
  };

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  std::size_t points = 0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw ShapeError("svg: series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const double x = tx(s.x[i]);
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
      ++points;
    }
  }
  if (points == 0) {
    xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  }
  auto widen = [](double& lo, double& hi) {
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
      const double pad = std::max(0.5, 0.1 * std::abs(hi));
      lo -= pad;
      hi += pad;
    }
  };
  widen(xmin, xmax);
  widen(ymin, ymax);
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
    << spec.height << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << spec.width << "\" height=\"" << spec.height
    << "\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    o << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << detail::escape(spec.title)
      << "</text>\n";

  // axes
  o << "<g stroke=\"black\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(top + ph) << "\" x2=\""
    << fixed(left + pw) << "\" y2=\"" << fixed(top + ph) << "\"/>\n";
  o << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(top) << "\" x2=\"" << fixed(left)
    << "\" y2=\"" << fixed(top + ph) << "\"/>\n";
  o << "</g>\n";

  o << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  const int nt = 5;
  for (int i = 0; i < nt; ++i) {
    const double fx = xmin + (xmax - xmin) * i / (nt - 1);
    const double fy = ymin + (ymax - ymin) * i / (nt - 1);
    const std::string xl = spec.log_x ? "1e" + detail::tick(fx) : detail::tick(fx);
    o << "<line x1=\"" << fixed(px(fx)) << "\" y1=\"" << fixed(top + ph) << "\" x2=\""
      << fixed(px(fx)) << "\" y2=\"" << fixed(top + ph + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fixed(px(fx)) << "\" y=\"" << fixed(top + ph + 18)
      << "\" text-anchor=\"middle\">" << detail::escape(xl) << "</text>\n";
    o << "<line x1=\"" << fixed(left - 5) << "\" y1=\"" << fixed(py(fy)) << "\" x2=\""
      << fixed(left) << "\" y2=\"" << fixed(py(fy)) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fixed(left - 8) << "\" y=\"" << fixed(py(fy) + 4)
      << "\" text-anchor=\"end\">" << detail::tick(fy) << "</text>\n";
  }
  o << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(h - 10)
    << "\" text-anchor=\"middle\">" << detail::escape(spec.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << fixed(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fixed(top + ph / 2) << ")\">" << detail::escape(spec.y_label) << "</text>\n";
  o << "</g>\n";

  if (points == 0) {
    o << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(top + ph / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" "
      << "fill=\"#666666\">no data</text>\n";
  }

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* col = detail::color(si);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.push_back({px(tx(s.x[i])), py(s.y[i])});
    if (spec.kind == PlotKind::kLine && pts.size() >= 2) {
      o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i)
        o << (i ? " " : "") << fixed(pts[i].first) << "," << fixed(pts[i].second);
      o << "\"/>\n";
    }
    for (const auto& [x, y] : pts)
      o << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(y) << "\" r=\"3\" fill=\"" << col
        << "\"/>\n";
  }

  // legend, drawn with rects so markers stay one per data point
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 10 + 18.0 * static_cast<double>(si);
    o << "<rect x=\"" << fixed(left + pw + 12) << "\" y=\"" << fixed(ly - 8)
      << "\" width=\"10\" height=\"10\" fill=\"" << detail::color(si) << "\"/>\n";
    o << "<text x=\"" << fixed(left + pw + 28) << "\" y=\"" << fixed(ly + 1)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::escape(series[si].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Column lookup in a JSONL row: "name" or "name[i]" for array fields.
inline double field(const nlohmann::json& row, const std::string& col, const std::string& where) {
  std::string key = col;
  std::optional<std::size_t> index;
  if (auto lb = col.find('['); lb != std::string::npos && col.back() == ']') {
    key = col.substr(0, lb);
    index = std::stoul(col.substr(lb + 1, col.size() - lb - 2));
  }
  if (!row.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  const nlohmann::json* v = &row[key];
  if (index) {
    if (!v->is_array() || *index >= v->size())
      throw FormatError(where + ": field '" + col + "' is not an array with that index");
    v = &(*v)[*index];
  }
  if (v->is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v->is_number()) throw FormatError(where + ": field '" + col + "' is not numeric");
  return v->get<double>();
}

inline std::string label_of(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

/// Groups rows into series by `group` (empty: one series), in order of first
/// appearance; points inside a series are sorted by x.
inline std::vector<Series> series_from_jsonl(const std::vector<nlohmann::json>& rows,
                                             const std::string& x, const std::string& y,
                                             const std::string& group, const std::string& name) {
  std::vector<Series> out;
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string where = name + ":" + std::to_string(i + 1);
    std::string g = y;
    if (!group.empty()) {
      if (!rows[i].contains(group)) throw FormatError(where + ": missing field '" + group + "'");
      g = group + "=" + label_of(rows[i][group]);
    }
    auto [it, fresh] = idx.try_emplace(g, out.size());
    if (fresh) out.push_back(Series{g, {}, {}});
    out[it->second].x.push_back(field(rows[i], x, where));
    out[it->second].y.push_back(field(rows[i], y, where));
  }
  for (auto& s : out) {
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    Series t{s.name, {}, {}};
    for (auto i : order) {
      t.x.push_back(s.x[i]);
      t.y.push_back(s.y[i]);
    }
    s = std::move(t);
  }
  return out;
}

/// Same for CSV tables; data lines are numbered as in the file (header is line 2).
inline std::vector<Series> series_from_csv(const exp::CsvTable& t, const std::string& x,
                                           const std::string& y, const std::string& group,
                                           const std::string& name) {
  std::vector<nlohmann::json> rows;
  const std::size_t xi = t.column(x), yi = t.column(y);
  const std::size_t gi = group.empty() ? 0 : t.column(group);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    nlohmann::json j;
    auto num = [&](std::size_t c) -> nlohmann::json {
      const std::string& cell = t.rows[r][c];
      if (cell.empty()) return nullptr;
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError(name + ":" + std::to_string(r + 3) + ": column '" + t.columns[c] +
                          "' is not numeric ('" + cell + "')");
      return v;
    };
    j[x] = num(xi);
    j[y] = num(yi);
    if (!group.empty()) j[group] = t.rows[r][gi];
    rows.push_back(std::move(j));
  }
  return series_from_jsonl(rows, x, y, group, name);
}

}  // namespace driftlab::svg
