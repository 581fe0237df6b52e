#include "support.hpp"

#include "wombet/datagen.hpp"
#include "wombet/errors.hpp"
#include "wombet/experiment.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace wombet;
using Eigen::VectorXd;

namespace {

Trajectory stats_only(double u_bar, double ret) {
  Trajectory t;
  t.steps.resize(1);
  t.mean_uncertainty = u_bar;
  t.ret = ret;
  return t;
}

FilterConfig explicit_filter(double u_th, double j_th, FilterRule rule = FilterRule::dual) {
  FilterConfig f;
  f.quantile_mode = false;
  f.u_threshold = u_th;
  f.return_threshold = j_th;
  f.rule = rule;
  return f;
}

// One generation shared by the tests below (built once).
const SourcePhase& fixture() {
  static const SourcePhase sp = run_source_phase(support::filter_fixture_config(), 3);
  return sp;
}

}  // namespace

TEST_CASE("dual filter decisions on hand-picked statistics") {
  const FilterConfig f = explicit_filter(0.1, 5.0);
  CHECK(filter_trajectory(stats_only(0.05, 10), f).accept);
  const auto r1 = filter_trajectory(stats_only(0.15, 10), f);
  CHECK(!r1.accept);
  CHECK(r1.reason == RejectReason::uncertainty);
  const auto r2 = filter_trajectory(stats_only(0.05, 4.9), f);
  CHECK(!r2.accept);
  CHECK(r2.reason == RejectReason::return_too_low);
  CHECK(filter_trajectory(stats_only(0.15, 4.9), f).reason == RejectReason::both);
  CHECK(filter_trajectory(Trajectory{}, explicit_filter(INFINITY, -INFINITY, FilterRule::none)).reason ==
        RejectReason::empty);
  CHECK(filter_trajectory(stats_only(0.1, 5.0), f).accept);  // thresholds are inclusive
}

TEST_CASE("single-criterion rules ignore the other criterion") {
  CHECK(filter_trajectory(stats_only(9.0, 10), explicit_filter(0.1, 5.0, FilterRule::reward_only)).accept);
  CHECK(!filter_trajectory(stats_only(0.0, 1), explicit_filter(0.1, 5.0, FilterRule::reward_only)).accept);
  CHECK(filter_trajectory(stats_only(0.0, -1e9), explicit_filter(0.1, 5.0, FilterRule::uncertainty_only)).accept);
  CHECK(filter_trajectory(stats_only(1e9, -1e9), explicit_filter(0.1, 5.0, FilterRule::none)).accept);
}

TEST_CASE("type-7 quantiles") {
  CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(quantile({10, 20, 30}, 0.6) == doctest::Approx(22.0));
  CHECK(quantile({7}, 0.3) == 7.0);
  CHECK(quantile({1, 2, 3}, 0.0) == 1.0);
  CHECK(quantile({1, 2, 3}, 1.0) == 3.0);
  CHECK_THROWS_AS(quantile({}, 0.5), PreconditionError);
}

TEST_CASE("open and impossible thresholds") {
  const auto& sp = fixture();
  const auto pair = pendulum_pair();
  DatagenSettings settings;
  const auto all = assemble_dataset(sp.generation.pool, pair, explicit_filter(INFINITY, -INFINITY), settings, {});
  CHECK(all.dataset.acceptance_rate() == 1.0);
  const auto none = assemble_dataset(sp.generation.pool, pair, explicit_filter(0.0, -INFINITY), settings, {});
  CHECK(none.dataset.acceptance_rate() == 0.0);
  CHECK(none.dataset.rows.empty());
}

TEST_CASE("persisted dataset passes the brute-force filter audit") {
  const auto& ds = fixture().generation.dataset;
  REQUIRE(ds.accepted_episodes() > 0);
  REQUIRE(ds.accepted_episodes() < ds.candidates.size());
  const auto loaded = decode_dataset(encode_dataset(ds));
  for (const auto* d : {&ds, &loaded}) {
    const auto audit = support::audit_filter(*d);
    CHECK(audit.candidates == static_cast<long>(ds.candidates.size()));
    CHECK(audit.persisted_episodes == static_cast<long>(ds.accepted_episodes()));
    CHECK(audit.decision_mismatches == 0);
    CHECK(audit.statistic_mismatches == 0);
    CHECK(audit.persisted_but_rejected == 0);
    CHECK(audit.problems.empty());
  }
}

TEST_CASE("accepted trajectories are more certain than uncertainty rejects and clear the return bar") {
  const auto& g = fixture().generation;
  double u_acc = 0, u_rej = 0, j_acc = 0;
  int n_acc = 0, n_rej = 0;
  for (const auto& c : g.dataset.candidates) {
    if (c.accepted) {
      u_acc += c.mean_uncertainty, j_acc += c.ret, ++n_acc;
    } else if (c.reason == RejectReason::uncertainty || c.reason == RejectReason::both) {
      u_rej += c.mean_uncertainty, ++n_rej;
    }
  }
  REQUIRE(n_acc > 0);
  REQUIRE(n_rej > 0);
  CHECK(u_acc / n_acc < u_rej / n_rej);
  CHECK(j_acc / n_acc >= g.resolved.return_threshold);
}

TEST_CASE("acceptance is monotone over a threshold grid") {
  const auto& pool = fixture().generation.pool;
  std::vector<double> us, js;
  for (const auto& t : pool) us.push_back(t.mean_uncertainty), js.push_back(t.ret);
  const double qs[] = {0.1, 0.3, 0.5, 0.7, 0.9};
  const auto pair = pendulum_pair();
  std::vector<std::vector<std::vector<bool>>> grid(5, std::vector<std::vector<bool>>(5));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double u_th = quantile(us, qs[i]);
      const double j_th = quantile(js, qs[4 - j]);  // j increasing = threshold lowered
      const auto ds = assemble_dataset(pool, pair, explicit_filter(u_th, j_th), DatagenSettings{}, {}).dataset;
      for (const auto& c : ds.candidates) grid[i][j].push_back(c.accepted);
      // Same decisions as the oracle on the in-memory pool.
      const auto oracle = support::accepted_set(pool, "dual", u_th, j_th);
      for (std::size_t k = 0; k < pool.size(); ++k) CHECK(grid[i][j][k] == (oracle.count(k) == 1));
    }
  auto subset = [](const std::vector<bool>& a, const std::vector<bool>& b) {
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k] && !b[k]) return false;
    return true;
  };
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      if (i + 1 < 5) CHECK(subset(grid[i][j], grid[i + 1][j]));
      if (j + 1 < 5) CHECK(subset(grid[i][j], grid[i][j + 1]));
    }
}

TEST_CASE("relabeling swaps in the target reward and keeps the source reward on record") {
  const auto& ds = fixture().generation.dataset;
  const auto pair = pendulum_pair();
  for (const auto& r : ds.rows) {
    const auto& t = r.transition;
    CHECK(t.from_source);
    CHECK(t.reward == quantize(reward(pair, TaskId::target, t.state, t.action)));
    // The source reward was measured before the state was quantized.
    CHECK(r.source_reward == doctest::Approx(reward(pair, TaskId::source, t.state, t.action)).epsilon(1e-7));
  }
  Trajectory bad;
  bad.steps.resize(1);
  bad.steps[0].state = VectorXd::Constant(2, NAN);
  bad.steps[0].action = VectorXd::Zero(1);
  CHECK_THROWS_AS(relabel(bad, pair, TaskId::target), PreconditionError);
}

TEST_CASE("quantization is idempotent at 9 significant digits") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), q = quantize(x);
    CHECK(quantize(q) == q);
    CHECK(std::abs(q - x) <= 5e-9 * std::abs(x));
  }
}

TEST_CASE("dataset files round-trip bit-exactly") {
  const auto& ds = fixture().generation.dataset;
  const std::string text = encode_dataset(ds);
  const auto back = decode_dataset(text);
  CHECK(encode_dataset(back) == text);
  REQUIRE(back.rows.size() == ds.rows.size());
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    const auto &a = ds.rows[i].transition, &b = back.rows[i].transition;
    CHECK(a.state == b.state);
    CHECK(a.action == b.action);
    CHECK(a.next_state == b.next_state);
    CHECK(a.reward == b.reward);
    CHECK(a.uncertainty == b.uncertainty);
    CHECK(ds.rows[i].source_reward == back.rows[i].source_reward);
  }
  CHECK(back.meta == ds.meta);
  const auto path = std::filesystem::temp_directory_path() / "wombet_test_dataset.wds";
  save_dataset(path, ds);
  CHECK(encode_dataset(load_dataset(path)) == text);
  std::filesystem::remove(path);
}

TEST_CASE("truncated or foreign dataset files raise parse errors") {
  const std::string text = encode_dataset(fixture().generation.dataset);
  std::vector<std::size_t> cuts;
  for (std::size_t i = 0; i < text.size(); i += 13) cuts.push_back(i);
  for (std::size_t i = 0; i < text.size(); ++i)
    if (text[i] == '\n') cuts.push_back(i + 1), cuts.push_back(i);
  for (auto cut : cuts) {
    if (cut >= text.size()) continue;
    CAPTURE(cut);
    CHECK_THROWS_AS(decode_dataset(text.substr(0, cut)), ParseError);
  }
  std::string v2 = text;
  v2.replace(0, 12, "WOMBET-DS v2");
  CHECK_THROWS_AS(decode_dataset(v2), UnsupportedVersion);
  CHECK_THROWS_AS(decode_dataset("hello\n"), ParseError);
  std::string bad = text;
  bad[bad.size() - 3] = 'x';
  CHECK_THROWS_AS(decode_dataset(bad), ParseError);
}

TEST_CASE("merging keeps episode ids unique") {
  const auto& ds = fixture().generation.dataset;
  OfflineDataset a = ds;
  CHECK_THROWS_AS(merge_into(a, ds), PreconditionError);
  const auto pair = pendulum_pair();
  DatagenSettings later;
  later.first_episode_id = 1000;
  const auto extra = assemble_dataset(fixture().generation.pool, pair, explicit_filter(INFINITY, -INFINITY), later, {});
  merge_into(a, extra.dataset);
  CHECK(a.candidates.size() == 2 * ds.candidates.size());
  CHECK(a.meta["generations"].size() == 2);
  CHECK(support::audit_filter(a).decision_mismatches == 0);
}

TEST_CASE("generation is deterministic and synthetic mode spends no real steps") {
  auto cfg = support::tiny_config();
  const auto a = run_source_phase(cfg, 5), b = run_source_phase(cfg, 5);
  CHECK(encode_dataset(a.generation.dataset) == encode_dataset(b.generation.dataset));
  CHECK(a.generation.real_steps == 4 * 30);
  apply_setting(cfg, "datagen.mode", "synthetic");
  const auto s = run_source_phase(cfg, 5);
  CHECK(s.generation.real_steps == 0);
  CHECK(s.generation.dataset.meta["generations"][0]["return_criterion"] == "model");
  CHECK(s.source_steps == 600);
}
