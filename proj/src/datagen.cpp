#include "wombet/datagen.hpp"

#include "wombet/errors.hpp"
#include "wombet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace wombet {

namespace {

constexpr const char* kMagic = "WOMBET-DS";
constexpr int kVersion = 1;

std::string fmt9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

// Candidate statistics are compared against thresholds, so they keep full
// round-trip precision.
std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

nlohmann::json threshold_json(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

RejectReason reason_from_string(const std::string& s) {
  if (s == "none") return RejectReason::none;
  if (s == "empty") return RejectReason::empty;
  if (s == "uncertainty") return RejectReason::uncertainty;
  if (s == "return") return RejectReason::return_too_low;
  if (s == "both") return RejectReason::both;
  throw std::invalid_argument("unknown reject reason '" + s + "'");
}

}  // namespace

const char* to_string(FilterRule rule) {
  switch (rule) {
    case FilterRule::reward_only: return "reward-only";
    case FilterRule::uncertainty_only: return "uncertainty-only";
    case FilterRule::none: return "no-filter";
    default: return "dual";
  }
}

FilterRule filter_rule_from_string(const std::string& s) {
  if (s == "dual") return FilterRule::dual;
  if (s == "reward-only") return FilterRule::reward_only;
  if (s == "uncertainty-only") return FilterRule::uncertainty_only;
  if (s == "no-filter") return FilterRule::none;
  throw ConfigError("unknown filter rule '" + s + "'");
}

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::empty: return "empty";
    case RejectReason::uncertainty: return "uncertainty";
    case RejectReason::return_too_low: return "return";
    case RejectReason::both: return "both";
    default: return "none";
  }
}

void validate(const FilterConfig& cfg) {
  if (cfg.quantile_mode) {
    if (!(cfg.u_quantile >= 0.0 && cfg.u_quantile <= 1.0) || !(cfg.return_quantile >= 0.0 && cfg.return_quantile <= 1.0))
      throw ConfigError("filter quantiles must lie in [0, 1]");
  } else if (cfg.u_threshold < 0.0) {
    throw ConfigError("uncertainty threshold must be >= 0");
  }
}

FilterDecision filter_trajectory(const Trajectory& traj, const FilterConfig& cfg) {
  if (traj.empty()) return {false, RejectReason::empty};
  const bool check_u = cfg.rule == FilterRule::dual || cfg.rule == FilterRule::uncertainty_only;
  const bool check_j = cfg.rule == FilterRule::dual || cfg.rule == FilterRule::reward_only;
  const bool u_bad = check_u && !(traj.mean_uncertainty <= cfg.u_threshold);
  const bool j_bad = check_j && !(traj.ret >= cfg.return_threshold);
  if (u_bad && j_bad) return {false, RejectReason::both};
  if (u_bad) return {false, RejectReason::uncertainty};
  if (j_bad) return {false, RejectReason::return_too_low};
  return {true, RejectReason::none};
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

FilterConfig resolve_thresholds(const FilterConfig& cfg, std::span<const Trajectory> pool) {
  validate(cfg);
  FilterConfig out = cfg;
  if (!cfg.quantile_mode) return out;
  out.quantile_mode = false;
  std::vector<double> us, js;
  for (const auto& t : pool) {
    if (t.empty()) continue;
    us.push_back(t.mean_uncertainty);
    js.push_back(t.ret);
  }
  if (us.empty()) return out;
  out.u_threshold = quantile(us, cfg.u_quantile);
  out.return_threshold = quantile(js, cfg.return_quantile);
  return out;
}

Trajectory relabel(const Trajectory& traj, const TaskPair& pair, TaskId task) {
  Trajectory out = traj;
  for (auto& t : out.steps) {
    if (!t.state.allFinite() || !t.action.allFinite()) throw PreconditionError("relabel: non-finite state or action");
    t.reward = reward(pair, task, t.state, t.action);
  }
  return out;
}

double quantize(double x) {
  if (!std::isfinite(x)) return x;
  return std::strtod(fmt9(x).c_str(), nullptr);
}

void quantize(Trajectory& traj, double gamma) {
  auto q = [](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = quantize(v(i));
  };
  for (auto& t : traj.steps) {
    q(t.state);
    q(t.action);
    q(t.next_state);
    t.reward = quantize(t.reward);
    t.uncertainty = quantize(t.uncertainty);
  }
  refresh_statistics(traj, gamma);
}

std::size_t OfflineDataset::accepted_episodes() const {
  return static_cast<std::size_t>(std::count_if(candidates.begin(), candidates.end(), [](const auto& c) { return c.accepted; }));
}

double OfflineDataset::acceptance_rate() const {
  if (candidates.empty()) return 0.0;
  return static_cast<double>(accepted_episodes()) / static_cast<double>(candidates.size());
}

std::vector<Transition> OfflineDataset::transitions() const {
  std::vector<Transition> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.transition);
  return out;
}

GenerationResult assemble_dataset(std::vector<Trajectory> pool, const TaskPair& pair, const FilterConfig& filter,
                                  const DatagenSettings& settings, const PlannerConfig& planner) {
  GenerationResult res;
  for (auto& t : pool) quantize(t, pair.gamma);
  res.resolved = resolve_thresholds(filter, pool);
  auto& ds = res.dataset;
  ds.state_dim = pair.dynamics.state_dim;
  ds.action_dim = pair.dynamics.action_dim;

  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& traj = pool[i];
    res.real_steps += traj.real_steps;
    const int episode = settings.first_episode_id + static_cast<int>(i);
    const FilterDecision d = filter_trajectory(traj, res.resolved);
    ds.candidates.push_back({episode, static_cast<int>(traj.steps.size()), traj.mean_uncertainty, traj.ret, d.accept,
                             d.reason});
    if (!d.accept) continue;
    const Trajectory target = relabel(traj, pair, TaskId::target);
    for (std::size_t k = 0; k < target.steps.size(); ++k) {
      DatasetRow row;
      row.episode = episode;
      row.step = static_cast<int>(k);
      row.transition = target.steps[k];
      row.transition.reward = quantize(row.transition.reward);
      row.transition.from_source = true;
      row.source_reward = traj.steps[k].reward;
      ds.rows.push_back(std::move(row));
    }
  }

  const auto& f = res.resolved;
  nlohmann::json prov = {
      {"task_pair", pair.id},
      {"gamma", pair.gamma},
      {"mode", to_string(settings.mode)},
      {"return_criterion", settings.mode == DatagenMode::real_mpc ? "real" : "model"},
      {"model_id", settings.model_id},
      {"planner",
       {{"horizon", planner.horizon},
        {"penalty", planner.penalty},
        {"population", planner.population},
        {"elite_fraction", planner.elite_fraction},
        {"iterations", planner.iterations},
        {"init_std", planner.init_std},
        {"std_floor", planner.std_floor},
        {"gamma", planner.gamma}}},
      {"filter",
       {{"rule", to_string(f.rule)},
        {"u_threshold", threshold_json(f.u_threshold)},
        {"return_threshold", threshold_json(f.return_threshold)},
        {"quantile_mode", filter.quantile_mode},
        {"u_quantile", filter.u_quantile},
        {"return_quantile", filter.return_quantile}}},
      {"episodes", settings.episodes},
      {"episode_len", settings.episode_len},
      {"first_episode_id", settings.first_episode_id},
      {"accepted", ds.accepted_episodes()},
      {"acceptance_rate", ds.acceptance_rate()}};
  ds.meta = {{"generations", nlohmann::json::array({prov})}};
  res.pool = std::move(pool);
  return res;
}

GenerationResult generate_offline_dataset(const TaskPair& pair, const EnsembleModel& model,
                                          const PlannerConfig& planner, const FilterConfig& filter,
                                          const DatagenSettings& settings, std::uint64_t seed) {
  if (!model.fitted) throw PreconditionError("generate_offline_dataset: model is not fitted");
  std::vector<Trajectory> pool;
  pool.reserve(static_cast<std::size_t>(std::max(0, settings.episodes)));
  for (int e = 0; e < settings.episodes; ++e)
    pool.push_back(mpc_rollout(pair, model, planner, settings.mode, settings.episode_len,
                               derive_seed(seed, static_cast<std::uint64_t>(settings.first_episode_id + e))));
  return assemble_dataset(std::move(pool), pair, filter, settings, planner);
}

void merge_into(OfflineDataset& a, const OfflineDataset& b) {
  if (!a.candidates.empty() && (a.state_dim != b.state_dim || a.action_dim != b.action_dim))
    throw PreconditionError("merge: datasets have different shapes");
  for (const auto& cb : b.candidates)
    for (const auto& ca : a.candidates)
      if (ca.episode == cb.episode) throw PreconditionError("merge: duplicate episode id");
  if (a.candidates.empty()) {
    a.state_dim = b.state_dim;
    a.action_dim = b.action_dim;
  }
  a.rows.insert(a.rows.end(), b.rows.begin(), b.rows.end());
  a.candidates.insert(a.candidates.end(), b.candidates.begin(), b.candidates.end());
  if (!a.meta.contains("generations")) a.meta["generations"] = nlohmann::json::array();
  for (const auto& g : b.meta.value("generations", nlohmann::json::array())) a.meta["generations"].push_back(g);
}

// ---------------------------------------------------------------------------
// Text format

std::string encode_dataset(const OfflineDataset& ds) {
  nlohmann::json header;
  header["state_dim"] = ds.state_dim;
  header["action_dim"] = ds.action_dim;
  header["rows"] = ds.rows.size();
  header["candidates"] = nlohmann::json::array();
  for (const auto& c : ds.candidates)
    header["candidates"].push_back({{"episode", c.episode},
                                    {"length", c.length},
                                    {"u_bar", fmt17(c.mean_uncertainty)},
                                    {"J", fmt17(c.ret)},
                                    {"accepted", c.accepted},
                                    {"reason", to_string(c.reason)}});
  header["provenance"] = ds.meta;

  std::string out = std::string(kMagic) + " v" + std::to_string(kVersion) + "\n" + header.dump() + "\n";
  std::string cols = "episode,step";
  for (int i = 0; i < ds.state_dim; ++i) cols += ",s" + std::to_string(i);
  for (int i = 0; i < ds.action_dim; ++i) cols += ",a" + std::to_string(i);
  cols += ",r_source,r_target";
  for (int i = 0; i < ds.state_dim; ++i) cols += ",s_next" + std::to_string(i);
  cols += ",done,u\n";
  out += cols;

  for (const auto& r : ds.rows) {
    const auto& t = r.transition;
    std::string line = std::to_string(r.episode) + "," + std::to_string(r.step);
    for (Eigen::Index i = 0; i < t.state.size(); ++i) line += "," + fmt9(t.state(i));
    for (Eigen::Index i = 0; i < t.action.size(); ++i) line += "," + fmt9(t.action(i));
    line += "," + fmt9(r.source_reward) + "," + fmt9(t.reward);
    for (Eigen::Index i = 0; i < t.next_state.size(); ++i) line += "," + fmt9(t.next_state(i));
    line += std::string(",") + (t.done ? "1" : "0") + "," + fmt9(t.uncertainty) + "\n";
    out += line;
  }
  return out;
}

namespace {

struct LineReader {
  const std::string& text;
  std::size_t pos = 0;

  // Returns false at end of input. Lines must be newline-terminated.
  bool next(std::string_view& line, std::size_t& offset) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) throw ParseError("unterminated line (truncated file?)", pos);
    offset = pos;
    line = std::string_view(text).substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  }
};

double parse_number(std::string_view field, std::size_t offset) {
  const std::string s(field);
  if (s.empty()) throw ParseError("empty numeric field", offset);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("malformed number '" + s + "'", offset);
  return v;
}

int parse_int(std::string_view field, std::size_t offset) {
  const double v = parse_number(field, offset);
  if (v != std::floor(v)) throw ParseError("expected an integer", offset);
  return static_cast<int>(v);
}

}  // namespace

OfflineDataset decode_dataset(const std::string& text) {
  LineReader reader{text};
  std::string_view line;
  std::size_t offset = 0;

  if (!reader.next(line, offset)) throw ParseError("empty dataset file", 0);
  const std::string expected_magic = std::string(kMagic) + " v" + std::to_string(kVersion);
  if (line.substr(0, std::string_view(kMagic).size()) != kMagic) throw ParseError("not a dataset file", 0);
  if (line != expected_magic) throw UnsupportedVersion("unsupported dataset version: '" + std::string(line) + "'");

  if (!reader.next(line, offset)) throw ParseError("missing metadata block", text.size());
  OfflineDataset ds;
  std::size_t expected_rows = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    ds.state_dim = header.at("state_dim").get<int>();
    ds.action_dim = header.at("action_dim").get<int>();
    expected_rows = header.at("rows").get<std::size_t>();
    for (const auto& c : header.at("candidates")) {
      CandidateRecord r;
      r.episode = c.at("episode").get<int>();
      r.length = c.at("length").get<int>();
      r.mean_uncertainty = std::strtod(c.at("u_bar").get<std::string>().c_str(), nullptr);
      r.ret = std::strtod(c.at("J").get<std::string>().c_str(), nullptr);
      r.accepted = c.at("accepted").get<bool>();
      r.reason = reason_from_string(c.at("reason").get<std::string>());
      ds.candidates.push_back(r);
    }
    ds.meta = header.at("provenance");
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad metadata block: ") + e.what(), offset + e.byte);
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad metadata block: ") + e.what(), offset);
  }
  if (ds.state_dim <= 0 || ds.action_dim <= 0) throw ParseError("non-positive dimensions in metadata", offset);

  if (!reader.next(line, offset)) throw ParseError("missing column header", text.size());
  const std::size_t n = static_cast<std::size_t>(ds.state_dim);
  const std::size_t m = static_cast<std::size_t>(ds.action_dim);
  const std::size_t fields = 2 + n + m + 2 + n + 2;
  if (static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1 != fields ||
      line.substr(0, 12) != "episode,step")
    throw ParseError("unexpected column header", offset);

  while (reader.next(line, offset)) {
    std::vector<std::pair<std::string_view, std::size_t>> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start),
                     offset + start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != fields)
      throw ParseError("expected " + std::to_string(fields) + " fields, found " + std::to_string(f.size()), offset);
    DatasetRow row;
    std::size_t k = 0;
    row.episode = parse_int(f[k].first, f[k].second);
    ++k;
    row.step = parse_int(f[k].first, f[k].second);
    ++k;
    auto& t = row.transition;
    t.state.resize(ds.state_dim);
    t.action.resize(ds.action_dim);
    t.next_state.resize(ds.state_dim);
    for (std::size_t i = 0; i < n; ++i, ++k) t.state(static_cast<Eigen::Index>(i)) = parse_number(f[k].first, f[k].second);
    for (std::size_t i = 0; i < m; ++i, ++k) t.action(static_cast<Eigen::Index>(i)) = parse_number(f[k].first, f[k].second);
    row.source_reward = parse_number(f[k].first, f[k].second);
    ++k;
    t.reward = parse_number(f[k].first, f[k].second);
    ++k;
    for (std::size_t i = 0; i < n; ++i, ++k)
      t.next_state(static_cast<Eigen::Index>(i)) = parse_number(f[k].first, f[k].second);
    const int done = parse_int(f[k].first, f[k].second);
    if (done != 0 && done != 1) throw ParseError("done must be 0 or 1", f[k].second);
    t.done = done == 1;
    ++k;
    t.uncertainty = parse_number(f[k].first, f[k].second);
    t.from_source = true;
    ds.rows.push_back(std::move(row));
  }
  if (ds.rows.size() != expected_rows)
    throw ParseError("expected " + std::to_string(expected_rows) + " rows, found " + std::to_string(ds.rows.size()),
                     text.size());
  return ds;
}

void save_dataset(const std::filesystem::path& path, const OfflineDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string text = encode_dataset(ds);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_dataset(ss.str());
}

}  // namespace wombet
