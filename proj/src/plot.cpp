#include "pts/plot.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pts {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<double>>> read_csv_columns(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::ParseError, path.string() + ":1: empty csv");
  {
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) cols.push_back({name, {}});
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t i = 0;
    while (std::getline(ss, cell, ',')) {
      if (i >= cols.size()) throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": extra cell");
      try {
        cols[i++].second.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (i != cols.size()) throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": short row");
  }
  return cols;
}

std::string render_svg(const PlotSpec& spec) {
  struct Line {
    std::vector<double> x, y;
  };
  std::vector<Line> lines;
  double xmax = 1.0, ymax = 1.0;
  for (const auto& s : spec.series) {
    const auto cols = read_csv_columns(s.csv);
    auto find = [&](const std::string& name) -> const std::vector<double>& {
      for (const auto& [n, v] : cols) {
        if (n == name) return v;
      }
      throw Error(Errc::ParseError, s.csv.string() + ": no column '" + name + "'");
    };
    Line l{find(s.x_column), find(s.y_column)};
    std::vector<std::size_t> order(l.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return l.x[a] < l.x[b]; });
    Line sorted;
    for (auto i : order) {
      sorted.x.push_back(l.x[i]);
      sorted.y.push_back(l.y[i]);
    }
    for (double v : sorted.x) xmax = std::max(xmax, v);
    for (double v : sorted.y) ymax = std::max(ymax, v);
    lines.push_back(std::move(sorted));
  }

  const double left = 60, right = 160, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + x / xmax * pw; };
  auto py = [&](double y) { return top + ph - y / ymax * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
      << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmax * i / 5, fy = ymax * i / 5;
    out << "<line x1=\"" << fmt(px(fx)) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(px(fx)) << "\" y2=\""
        << fmt(top + ph) << "\" stroke=\"#ddd\"/>\n";
    out << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(fy)) << "\" x2=\"" << fmt(left + pw) << "\" y2=\""
        << fmt(py(fy)) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(top + ph + 16) << "\" text-anchor=\"middle\">" << fmt(fx)
        << "</text>\n";
    out << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(fy) + 4) << "\" text-anchor=\"end\">" << fmt(fy)
        << "</text>\n";
  }
  out << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << spec.height - 10 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  out << "<text x=\"15\" y=\"" << fmt(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << fmt(top + ph / 2) << ")\">" << escape(spec.y_label) << "</text>\n";
  for (std::size_t s = 0; s < lines.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < lines[s].x.size(); ++i) {
      out << (i ? " " : "") << fmt(px(lines[s].x[i])) << ',' << fmt(py(lines[s].y[i]));
    }
    out << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    out << "<line x1=\"" << fmt(left + pw + 10) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(left + pw + 30)
        << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt(left + pw + 34) << "\" y=\"" << fmt(ly + 4) << "\">" << escape(spec.series[s].label)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace pts
