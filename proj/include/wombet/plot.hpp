#pragma once

// Learning-curve SVGs: one file per task, one curve per method, mean
// across seeds with a +-1 std band.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace wombet {

struct CurvePoint {
  long env_steps = 0;
  double mean = 0.0;
  double std = 0.0;
  int seeds = 0;
};

// method -> curve, for one task.
using CurveSet = std::map<std::string, std::vector<CurvePoint>>;

// task -> curves, from every metrics CSV (first column "schema") in dir.
// Throws std::runtime_error when there is none.
std::map<std::string, CurveSet> load_curves(const std::filesystem::path& dir);

std::string render_svg(const std::string& title, const CurveSet& curves);

// Writes <dir>/curves_<task>.svg per task; returns the paths.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir);

}  // namespace wombet
