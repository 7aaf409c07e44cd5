#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "stgdat/gdat.hpp"
#include "stgdat/grad_check.hpp"
#include "stgdat/rng.hpp"

using namespace stgdat;
using namespace stgdat::model;

namespace {

// Hand-built fully-connected step over n agents (positions irrelevant here).
graph::StepGraph complete_step(int n) {
  graph::StepGraph s;
  s.poses.resize(static_cast<std::size_t>(n));
  s.edge_index.assign(static_cast<std::size_t>(n) * n, -1);
  s.neighbors.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    s.neighbors[static_cast<std::size_t>(i)].push_back(i);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      graph::Edge e;
      e.from = i;
      e.to = j;
      s.edge_index[static_cast<std::size_t>(i) * n + j] =
          static_cast<int>(s.edges.size());
      s.edges.push_back(e);
      s.neighbors[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  return s;
}

std::vector<Tape::Ref> constant_rows(Tape& t, int n, int dim, Rng& rng,
                                     double scale = 1.0) {
  std::vector<Tape::Ref> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(t.constant(Tensor::uniform({1, dim}, -scale, scale, rng)));
  }
  return out;
}

std::vector<Tape::Ref> zero_rows(Tape& t, int n, int dim) {
  std::vector<Tape::Ref> out;
  for (int i = 0; i < n; ++i) out.push_back(t.constant(Tensor::zeros({1, dim})));
  return out;
}

GdatConfig tiny_config() {
  GdatConfig cfg;
  cfg.n_heads = 2;
  cfg.rounds = 2;
  cfg.node_dim = 4;
  cfg.edge_dim = 2;
  return cfg;
}

graph::SceneGraph chain_graph(int n, int steps, double d,
                              const std::vector<Vec2>& positions) {
  // Positions fixed across steps; adjacency from the distance rule.
  graph::GraphConfig cfg;
  cfg.d = d;
  data::SceneSample sample;
  sample.horizon = {steps, 1, 0.5};
  for (int i = 0; i < n; ++i) {
    data::AgentTrajectory traj;
    traj.agent_id = i;
    for (int k = 0; k < steps + 1; ++k) {
      data::TrajPoint p;
      p.t = 0.5 * k;
      p.x = positions[static_cast<std::size_t>(i)].x;
      p.y = positions[static_cast<std::size_t>(i)].y;
      traj.points.push_back(p);
    }
    sample.agents.push_back(traj);
  }
  return graph::build_graphs(sample, cfg).history;
}

}  // namespace

TEST_CASE("isolated node attends only to itself") {
  ParamStore store;
  Rng rng(1);
  GdatConfig cfg = tiny_config();
  const Gdat g = Gdat::create(store, cfg, rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(1);
  AttentionDump dump;
  const auto out = g.topological_attention(t, step, constant_rows(t, 1, 4, rng),
                                           {}, 0, 0, &dump);
  REQUIRE(out.size() == 1);
  REQUIRE(dump.records.size() == 2);  // two heads
  for (const auto& rec : dump.records) {
    REQUIRE(rec.coefficients.size() == 1);
    CHECK(rec.coefficients[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("identical attributes and zero edges attend uniformly") {
  ParamStore store;
  Rng rng(2);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(3);
  Tensor same = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  std::vector<Tape::Ref> nodes = {t.constant(same), t.constant(same),
                                  t.constant(same)};
  AttentionDump dump;
  g.topological_attention(t, step, nodes, zero_rows(t, 6, 2), 0, 0, &dump);
  for (const auto& rec : dump.records) {
    REQUIRE(rec.coefficients.size() == 3);
    for (double c : rec.coefficients) {
      CHECK(c == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-node attention matches the closed-form softmax") {
  // Scalar attributes 0 and 2, unit lambda (the initialization), zero edges:
  // scores are 0 (self) and -4, so alpha_self = 1 / (1 + e^-4).
  ParamStore store;
  Rng rng(3);
  GdatConfig cfg;
  cfg.n_heads = 1;
  cfg.node_dim = 1;
  cfg.edge_dim = 1;
  const Gdat g = Gdat::create(store, cfg, rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(2);
  std::vector<Tape::Ref> nodes = {t.constant(Tensor::scalar(0.0)),
                                  t.constant(Tensor::scalar(2.0))};
  AttentionDump dump;
  g.topological_attention(t, step, nodes, zero_rows(t, 2, 1), 0, 0, &dump);
  REQUIRE(dump.records.size() == 2);
  const auto& rec = dump.records[0];  // agent 0
  REQUIRE(rec.targets.size() == 2);
  CHECK(rec.targets[0] == 0);
  const double expect_self = 1.0 / (1.0 + std::exp(-4.0));
  CHECK(rec.coefficients[0] == doctest::Approx(expect_self).epsilon(1e-9));
  CHECK(rec.coefficients[1] == doctest::Approx(1.0 - expect_self).epsilon(1e-9));
  CHECK(rec.coefficients[0] == doctest::Approx(0.98201).epsilon(1e-4));
}

TEST_CASE("attention coefficients always normalize") {
  ParamStore store;
  Rng rng(4);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(4);
  AttentionDump dump;
  g.topological_attention(t, step, constant_rows(t, 4, 4, rng),
                          constant_rows(t, 12, 2, rng), 0, 0, &dump);
  REQUIRE(dump.records.size() == 8);  // 4 agents x 2 heads
  for (const auto& rec : dump.records) {
    double sum = 0.0;
    for (double c : rec.coefficients) sum += c;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("edge update determinism and dimension") {
  ParamStore store;
  Rng rng(5);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(2);
  Tensor va = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  Tensor vb = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  Tensor e = Tensor::uniform({1, 2}, -1.0, 1.0, rng);
  // Both directed edges carry the same (v_from, v_to, e) triple by symmetry
  // of this setup only when endpoints are swapped consistently; instead give
  // both edges identical inputs to check determinism.
  std::vector<Tape::Ref> nodes = {t.constant(va), t.constant(va)};
  std::vector<Tape::Ref> edges = {t.constant(e), t.constant(e)};
  const auto updated = g.edge_update(t, step, nodes, edges);
  REQUIRE(updated.size() == 2);
  CHECK(t.value(updated[0]).cols() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(t.value(updated[0])[i] == t.value(updated[1])[i]);
  }
}

TEST_CASE("temporal attention normalizes, is uniform for constant sequences") {
  ParamStore store;
  Rng rng(6);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Tape t(&store);
  Tensor same = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  std::vector<Tape::Ref> seq = {t.constant(same), t.constant(same),
                                t.constant(same), t.constant(same)};
  AttentionDump dump;
  const auto out = g.temporal_attention(t, seq, 0, &dump);
  CHECK(t.value(out).cols() == 4);
  REQUIRE(dump.records.size() == 2);
  for (const auto& rec : dump.records) {
    REQUIRE(rec.coefficients.size() == 4);
    double sum = 0.0;
    for (double c : rec.coefficients) {
      CHECK(c == doctest::Approx(0.25).epsilon(1e-12));
      sum += c;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Random sequences still normalize.
  AttentionDump dump2;
  g.temporal_attention(t, constant_rows(t, 5, 4, rng), 0, &dump2);
  for (const auto& rec : dump2.records) {
    double sum = 0.0;
    for (double c : rec.coefficients) sum += c;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("single-step temporal attention reduces to an activated projection") {
  ParamStore store;
  Rng rng(7);
  GdatConfig cfg = tiny_config();
  const Gdat g = Gdat::create(store, cfg, rng);
  Tape t(&store);
  Tensor v = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  const auto out = g.temporal_attention(t, {t.constant(v)});
  // beta = 1, so each head is leaky(v P_h); reproduce by hand.
  for (int h = 0; h < 2; ++h) {
    const Tensor& p = store.at(g.temp_proj[static_cast<std::size_t>(h)]).value;
    for (int c = 0; c < 2; ++c) {
      double dot = 0.0;
      for (int i = 0; i < 4; ++i) dot += v[i] * p(i, c);
      const double expect = dot >= 0 ? dot : 0.2 * dot;
      CHECK(t.value(out)[h * 2 + c] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("full encode is permutation equivariant") {
  ParamStore store;
  Rng rng(8);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  // 3 agents, 2 steps, complete graph.
  const auto sg = chain_graph(3, 2, 100.0, {{0, 0}, {3, 0}, {0, 4}});
  REQUIRE(sg.steps.size() == 2);

  std::vector<std::vector<Tensor>> node_vals(2), edge_vals(2);
  Rng data_rng(99);
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 3; ++i) {
      node_vals[k].push_back(Tensor::uniform({1, 4}, -1.0, 1.0, data_rng));
    }
    for (std::size_t e = 0; e < sg.steps[k].edges.size(); ++e) {
      edge_vals[k].push_back(Tensor::uniform({1, 2}, -1.0, 1.0, data_rng));
    }
  }

  Tape t1(&store);
  std::vector<std::vector<Tape::Ref>> nodes1(2), edges1(2);
  for (int k = 0; k < 2; ++k) {
    for (const auto& v : node_vals[k]) nodes1[k].push_back(t1.constant(v));
    for (const auto& v : edge_vals[k]) edges1[k].push_back(t1.constant(v));
  }
  const auto out1 = g.encode(t1, sg, nodes1, edges1);

  // Permute agents: sigma maps new index -> old index.
  const int sigma[3] = {2, 0, 1};
  std::vector<Vec2> perm_pos = {{0, 4}, {0, 0}, {3, 0}};
  const auto sg2 = chain_graph(3, 2, 100.0, perm_pos);
  Tape t2(&store);
  std::vector<std::vector<Tape::Ref>> nodes2(2), edges2(2);
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 3; ++i) {
      nodes2[k].push_back(t2.constant(node_vals[k][static_cast<std::size_t>(sigma[i])]));
    }
    edges2[k].resize(sg2.steps[k].edges.size());
    for (std::size_t e = 0; e < sg2.steps[k].edges.size(); ++e) {
      const auto& edge = sg2.steps[k].edges[e];
      // Matching edge in the original indexing.
      const int oi = sigma[edge.from], oj = sigma[edge.to];
      const int orig = sg.steps[k].edge_at(oi, oj);
      REQUIRE(orig >= 0);
      edges2[k][e] = t2.constant(edge_vals[k][static_cast<std::size_t>(orig)]);
    }
  }
  const auto out2 = g.encode(t2, sg2, nodes2, edges2);

  for (int i = 0; i < 3; ++i) {
    int ni = 0;  // new index of old agent i
    for (int j = 0; j < 3; ++j) {
      if (sigma[j] == i) ni = j;
    }
    const Tensor& a = t1.value(out1[static_cast<std::size_t>(i)]);
    const Tensor& b = t2.value(out2[static_cast<std::size_t>(ni)]);
    for (int c = 0; c < 4; ++c) CHECK(std::abs(a[c] - b[c]) < 1e-9);
  }
}

TEST_CASE("with one round, out-of-neighborhood agents cannot influence") {
  ParamStore store;
  Rng rng(9);
  GdatConfig cfg = tiny_config();
  cfg.rounds = 1;
  const Gdat g = Gdat::create(store, cfg, rng);
  // Agents 0 and 1 within 10 m; agent 2 is 100 m away from both.
  const auto sg = chain_graph(3, 3, 10.0, {{0, 0}, {5, 0}, {100, 0}});
  Rng data_rng(123);
  std::vector<std::vector<Tensor>> node_vals(3);
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 3; ++i) {
      node_vals[k].push_back(Tensor::uniform({1, 4}, -1.0, 1.0, data_rng));
    }
  }
  auto run = [&](double bump) {
    Tape t(&store);
    std::vector<std::vector<Tape::Ref>> nodes(3), edges(3);
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < 3; ++i) {
        Tensor v = node_vals[k][static_cast<std::size_t>(i)];
        if (i == 2) {
          for (double& x : v.data) x += bump;
        }
        nodes[k].push_back(t.constant(v));
      }
      edges[k].resize(sg.steps[k].edges.size());
      for (std::size_t e = 0; e < sg.steps[k].edges.size(); ++e) {
        edges[k][e] = t.constant(Tensor::full({1, 2}, 0.3));
      }
    }
    const auto out = g.encode(t, sg, nodes, edges);
    std::vector<double> flat;
    for (int i = 0; i < 2; ++i) {
      for (int c = 0; c < 4; ++c) flat.push_back(t.value(out[static_cast<std::size_t>(i)])[c]);
    }
    return flat;
  };
  const auto base = run(0.0);
  const auto moved = run(2.5);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i] == doctest::Approx(moved[i]).epsilon(1e-12));
  }
}

TEST_CASE("single-agent encode is independent of the distance threshold") {
  ParamStore store;
  Rng rng(10);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Rng data_rng(5);
  std::vector<Tensor> vals;
  for (int k = 0; k < 3; ++k) vals.push_back(Tensor::uniform({1, 4}, -1.0, 1.0, data_rng));
  auto run = [&](double d) {
    const auto sg = chain_graph(1, 3, d, {{0, 0}});
    Tape t(&store);
    std::vector<std::vector<Tape::Ref>> nodes(3), edges(3);
    for (int k = 0; k < 3; ++k) nodes[k].push_back(t.constant(vals[static_cast<std::size_t>(k)]));
    const auto out = g.encode(t, sg, nodes, edges);
    return t.value(out[0]);
  };
  const Tensor a = run(5.0);
  const Tensor b = run(500.0);
  for (int i = 0; i < 4; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("uniform-attention ablation fixes all coefficients") {
  ParamStore store;
  Rng rng(11);
  GdatConfig cfg = tiny_config();
  cfg.uniform_attention = true;
  const Gdat g = Gdat::create(store, cfg, rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(3);
  AttentionDump dump;
  g.topological_attention(t, step, constant_rows(t, 3, 4, rng),
                          constant_rows(t, 6, 2, rng), 0, 0, &dump);
  for (const auto& rec : dump.records) {
    for (double c : rec.coefficients) CHECK(c == doctest::Approx(1.0 / 3.0));
  }
  AttentionDump dump2;
  g.temporal_attention(t, constant_rows(t, 5, 4, rng), 0, &dump2);
  for (const auto& rec : dump2.records) {
    for (double c : rec.coefficients) CHECK(c == doctest::Approx(0.2));
  }
}

TEST_CASE("gradients flow through the full dual attention stack") {
  ParamStore store;
  Rng rng(12);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  const auto sg = chain_graph(3, 2, 100.0, {{0, 0}, {3, 0}, {0, 4}});
  Rng data_rng(7);
  std::vector<std::vector<Tensor>> node_vals(2), edge_vals(2);
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 3; ++i) node_vals[k].push_back(Tensor::uniform({1, 4}, -1.0, 1.0, data_rng));
    for (std::size_t e = 0; e < sg.steps[k].edges.size(); ++e) {
      edge_vals[k].push_back(Tensor::uniform({1, 2}, -1.0, 1.0, data_rng));
    }
  }
  const auto r = nn::grad_check(
      [&](Tape& t) {
        std::vector<std::vector<Tape::Ref>> nodes(2), edges(2);
        for (int k = 0; k < 2; ++k) {
          for (const auto& v : node_vals[k]) nodes[k].push_back(t.constant(v));
          for (const auto& v : edge_vals[k]) edges[k].push_back(t.constant(v));
        }
        const auto out = g.encode(t, sg, nodes, edges);
        return t.sq_norm(t.concat_cols({out[0], out[1], out[2]}));
      },
      store, {1e-6, 3, 21});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("attention dump serializes to json") {
  ParamStore store;
  Rng rng(13);
  const Gdat g = Gdat::create(store, tiny_config(), rng);
  Tape t(&store);
  graph::StepGraph step = complete_step(2);
  AttentionDump dump;
  g.topological_attention(t, step, constant_rows(t, 2, 4, rng),
                          constant_rows(t, 2, 2, rng), 1, 3, &dump);
  const auto j = nlohmann::json::parse(dump.to_json());
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 4);
  CHECK(j.at(0).at("stage") == "topological");
  CHECK(j.at(0).at("step") == 3);
  CHECK(j.at(0).at("round") == 1);
  CHECK(j.at(0).at("coefficients").size() == 2);
}

TEST_CASE("config validation") {
  GdatConfig cfg;
  cfg.n_heads = 3;  // 64 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GdatConfig{};
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GdatConfig{};
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.temporal_head_dim() == 16);
}
