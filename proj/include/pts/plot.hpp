#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pts {

struct PlotSeries {
  std::filesystem::path csv;
  std::string x_column;
  std::string y_column;
  std::string label;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  int width = 640;
  int height = 420;
};

/// Reads a CSV with a header row into columns. Throws ParseError.
std::vector<std::pair<std::string, std::vector<double>>> read_csv_columns(const std::filesystem::path& path);

/// Static SVG line chart; axes span [0, 1] unless the data exceeds it.
std::string render_svg(const PlotSpec& spec);

}  // namespace pts
