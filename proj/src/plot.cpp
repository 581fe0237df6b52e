#include "wombet/plot.hpp"

#include "wombet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace wombet {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
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

std::map<std::string, CurveSet> load_curves(const std::filesystem::path& dir) {
  // task -> method -> steps -> per-seed returns
  std::map<std::string, std::map<std::string, std::map<long, std::vector<double>>>> raw;
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  int used = 0;
  for (const auto& f : files) {
    const CsvTable t = read_csv(f);
    if (t.header.empty() || t.header.front() != "schema") continue;
    ++used;
    const auto c_method = t.column("method"), c_task = t.column("task"), c_steps = t.column("env_steps"),
               c_ret = t.column("eval_return_mean");
    for (const auto& row : t.rows)
      raw[row[c_task]][row[c_method]][std::stol(row[c_steps])].push_back(std::stod(row[c_ret]));
  }
  if (used == 0) throw std::runtime_error("no metrics CSVs found in " + dir.string());

  std::map<std::string, CurveSet> out;
  for (const auto& [task, methods] : raw)
    for (const auto& [method, by_step] : methods) {
      auto& curve = out[task][method];
      for (const auto& [steps, vals] : by_step) {
        CurvePoint p;
        p.env_steps = steps;
        p.seeds = static_cast<int>(vals.size());
        for (double v : vals) p.mean += v;
        p.mean /= static_cast<double>(vals.size());
        for (double v : vals) p.std += (v - p.mean) * (v - p.mean);
        p.std = std::sqrt(p.std / static_cast<double>(vals.size()));
        curve.push_back(p);
      }
    }
  return out;
}

std::string render_svg(const std::string& title, const CurveSet& curves) {
  const double width = 720, height = 440, left = 80, right = 180, top = 40, bottom = 50;
  long x_min = std::numeric_limits<long>::max(), x_max = std::numeric_limits<long>::min();
  double y_min = std::numeric_limits<double>::infinity(), y_max = -y_min;
  for (const auto& [_, pts] : curves)
    for (const auto& p : pts) {
      x_min = std::min(x_min, p.env_steps);
      x_max = std::max(x_max, p.env_steps);
      y_min = std::min(y_min, p.mean - p.std);
      y_max = std::max(y_max, p.mean + p.std);
    }
  if (x_min > x_max) x_min = x_max = 0;
  if (!std::isfinite(y_min)) y_min = y_max = 0.0;
  if (y_max - y_min < 1e-9) {
    y_min -= 1.0;
    y_max += 1.0;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](long x) { return left + (x_max == x_min ? 0.0 : pw * static_cast<double>(x - x_min) / (x_max - x_min)); };
  auto sy = [&](double y) { return top + ph * (1.0 - (y - y_min) / (y_max - y_min)); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" data-x-min=\"" << x_min << "\" data-x-max=\"" << x_max
     << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const long xv = x_min + (x_max - x_min) * i / 4;
    const double yv = y_min + (y_max - y_min) * i / 4.0;
    os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(top + ph + 18)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << xv << "</text>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(yv) + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 10)
     << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">target environment steps</text>\n";

  int k = 0;
  for (const auto& [method, pts] : curves) {
    const char* color = kPalette[k % 8];
    std::ostringstream band, line;
    for (const auto& p : pts) band << num(sx(p.env_steps)) << ',' << num(sy(p.mean + p.std)) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it)
      band << num(sx(it->env_steps)) << ',' << num(sy(it->mean - it->std)) << ' ';
    for (const auto& p : pts) line << num(sx(p.env_steps)) << ',' << num(sy(p.mean)) << ' ';
    os << "<g data-method=\"" << escape(method) << "\">\n";
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(left + pw + 10) << "\" y=\"" << num(top + 16 + 18 * k)
       << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">" << escape(method) << "</text>\n";
    os << "</g>\n";
    ++k;
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& [task, curves] : load_curves(dir)) {
    const auto path = dir / ("curves_" + task + ".svg");
    std::ofstream os(path, std::ios::binary);
    os << render_svg(task + ": evaluation return (mean +- std over seeds)", curves);
    out.push_back(path);
  }
  return out;
}

}  // namespace wombet
