#include "stgdat/gdat.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "stgdat/rng.hpp"

namespace stgdat::model {

void GdatConfig::validate() const {
  if (n_heads < 1) throw std::invalid_argument("n_heads must be >= 1");
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (node_dim <= 0 || edge_dim <= 0) {
    throw std::invalid_argument("node/edge dims must be positive");
  }
  if (node_dim % n_heads != 0) {
    throw std::invalid_argument("node_dim must divide evenly across heads");
  }
}

std::string AttentionDump::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const AttentionRecord& r : records) {
    nlohmann::json j;
    j["stage"] = r.stage;
    j["agent"] = r.agent;
    j["step"] = r.step;
    j["head"] = r.head;
    j["round"] = r.round;
    j["targets"] = r.targets;
    j["coefficients"] = r.coefficients;
    out.push_back(std::move(j));
  }
  return out.dump(2);
}

Gdat Gdat::create(ParamStore& store, const GdatConfig& cfg, Rng& rng,
                  const std::string& prefix) {
  cfg.validate();
  Gdat g;
  g.cfg = cfg;
  // softplus(0.5413...) = 1: heads start identical and drift apart in training.
  const double raw_one = std::log(std::exp(1.0) - 1.0);
  g.lambda_raw = prefix + ".lambda_raw";
  g.mu_raw = prefix + ".mu_raw";
  store.add(g.lambda_raw, Tensor::full({1, cfg.n_heads}, raw_one));
  store.add(g.mu_raw, Tensor::full({1, cfg.n_heads}, raw_one));
  g.node_w = prefix + ".node_w";
  store.add(g.node_w, glorot_uniform(cfg.node_dim, cfg.node_dim, rng));
  g.head_proj = nn::DenseLayer::create(store, prefix + ".head_proj",
                                       cfg.n_heads * cfg.node_dim, cfg.node_dim,
                                       Activation::none, rng);
  g.edge_mlp = nn::Mlp::create(
      store, prefix + ".edge_mlp",
      {2 * cfg.node_dim + cfg.edge_dim, cfg.node_dim, cfg.edge_dim},
      Activation::leaky_relu, Activation::none, rng, cfg.leaky);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const std::string s = prefix + ".temporal.score" + std::to_string(h);
    const std::string p = prefix + ".temporal.proj" + std::to_string(h);
    store.add(s, glorot_uniform(cfg.node_dim, 1, rng));
    store.add(p, glorot_uniform(cfg.node_dim, cfg.temporal_head_dim(), rng));
    g.temp_score.push_back(s);
    g.temp_proj.push_back(p);
  }
  return g;
}

std::vector<Tape::Ref> Gdat::topological_attention(
    Tape& t, const graph::StepGraph& step, const std::vector<Tape::Ref>& nodes,
    const std::vector<Tape::Ref>& edges, int round, int step_index,
    AttentionDump* dump) const {
  const int n = static_cast<int>(nodes.size());
  if (static_cast<std::size_t>(n) != step.poses.size()) {
    throw std::invalid_argument("node attribute count does not match the step");
  }
  if (edges.size() != step.edges.size()) {
    throw std::invalid_argument("edge attribute count does not match the step");
  }
  const Tape::Ref lam_row = t.softplus(t.param(lambda_raw));
  const Tape::Ref mu_row = t.softplus(t.param(mu_raw));
  std::vector<Tape::Ref> lam(static_cast<std::size_t>(cfg.n_heads));
  std::vector<Tape::Ref> mu(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    lam[static_cast<std::size_t>(h)] = t.slice_cols(lam_row, h, 1);
    mu[static_cast<std::size_t>(h)] = t.slice_cols(mu_row, h, 1);
  }
  const Tape::Ref w = t.param(node_w);
  std::vector<Tape::Ref> vw(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    vw[static_cast<std::size_t>(j)] = t.matmul(nodes[static_cast<std::size_t>(j)], w);
  }

  std::vector<Tape::Ref> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::vector<int>& nb = step.neighbors[static_cast<std::size_t>(i)];
    if (nb.empty()) {
      throw std::invalid_argument("agent " + std::to_string(i) +
                                  " has an empty neighborhood; build the graph "
                                  "with include_self");
    }
    const int k = static_cast<int>(nb.size());
    // Distance terms are head-independent; compute once per neighbor.
    std::vector<Tape::Ref> d2(nb.size()), e2(nb.size());
    for (std::size_t jj = 0; jj < nb.size(); ++jj) {
      const int j = nb[jj];
      if (j == i) continue;  // both terms are exactly zero for the self edge
      d2[jj] = t.sq_dist(nodes[static_cast<std::size_t>(i)],
                         nodes[static_cast<std::size_t>(j)]);
      const int ei = step.edge_at(i, j);
      if (ei < 0) throw std::logic_error("neighbor without a matching edge");
      e2[jj] = t.sq_norm(edges[static_cast<std::size_t>(ei)]);
    }
    std::vector<Tape::Ref> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Tape::Ref alpha;
      if (cfg.uniform_attention) {
        alpha = t.constant(Tensor::full({1, k}, 1.0 / k));
      } else {
        std::vector<Tape::Ref> scores;
        scores.reserve(nb.size());
        for (std::size_t jj = 0; jj < nb.size(); ++jj) {
          if (nb[jj] == i) {
            scores.push_back(t.scalar(0.0));
          } else {
            const Tape::Ref quad =
                t.add(t.mul(lam[static_cast<std::size_t>(h)], d2[jj]),
                      t.mul(mu[static_cast<std::size_t>(h)], e2[jj]));
            scores.push_back(t.affine(quad, -1.0, 0.0));
          }
        }
        alpha = t.softmax_row(t.concat_cols(std::move(scores)));
      }
      if (dump != nullptr) {
        AttentionRecord rec;
        rec.stage = "topological";
        rec.agent = i;
        rec.step = step_index;
        rec.head = h;
        rec.round = round;
        rec.targets = nb;
        const Tensor& a = t.value(alpha);
        rec.coefficients.assign(a.data.begin(), a.data.end());
        dump->records.push_back(std::move(rec));
      }
      std::vector<Tape::Ref> terms;
      terms.reserve(nb.size());
      for (std::size_t jj = 0; jj < nb.size(); ++jj) {
        const Tape::Ref scaled =
            t.matmul(t.slice_cols(alpha, static_cast<int>(jj), 1),
                     vw[static_cast<std::size_t>(nb[jj])]);
        terms.push_back(t.activation(scaled, Activation::leaky_relu, cfg.leaky));
      }
      heads.push_back(t.add_n(std::move(terms)));
    }
    out.push_back(head_proj.apply(t, t.concat_cols(std::move(heads))));
  }
  return out;
}

std::vector<Tape::Ref> Gdat::edge_update(Tape& t, const graph::StepGraph& step,
                                         const std::vector<Tape::Ref>& nodes,
                                         const std::vector<Tape::Ref>& edges) const {
  std::vector<Tape::Ref> out;
  out.reserve(edges.size());
  for (std::size_t e = 0; e < step.edges.size(); ++e) {
    const graph::Edge& edge = step.edges[e];
    const Tape::Ref joint =
        t.concat_cols({nodes[static_cast<std::size_t>(edge.from)],
                       nodes[static_cast<std::size_t>(edge.to)], edges[e]});
    out.push_back(edge_mlp.apply(t, joint));
  }
  return out;
}

Tape::Ref Gdat::temporal_attention(Tape& t, const std::vector<Tape::Ref>& sequence,
                                   int agent, AttentionDump* dump) const {
  if (sequence.empty()) {
    throw std::invalid_argument("temporal attention over an empty sequence");
  }
  const int steps = static_cast<int>(sequence.size());
  std::vector<Tape::Ref> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tape::Ref beta;
    if (cfg.uniform_attention) {
      beta = t.constant(Tensor::full({1, steps}, 1.0 / steps));
    } else {
      const Tape::Ref wscore = t.param(temp_score[static_cast<std::size_t>(h)]);
      std::vector<Tape::Ref> scores;
      scores.reserve(sequence.size());
      for (const Tape::Ref v : sequence) {
        scores.push_back(t.activation(t.matmul(v, wscore),
                                      Activation::leaky_relu, cfg.leaky));
      }
      beta = t.softmax_row(t.concat_cols(std::move(scores)));
    }
    if (dump != nullptr) {
      AttentionRecord rec;
      rec.stage = "temporal";
      rec.agent = agent;
      rec.step = -1;
      rec.head = h;
      for (int k = 0; k < steps; ++k) rec.targets.push_back(k);
      const Tensor& b = t.value(beta);
      rec.coefficients.assign(b.data.begin(), b.data.end());
      dump->records.push_back(std::move(rec));
    }
    const Tape::Ref wproj = t.param(temp_proj[static_cast<std::size_t>(h)]);
    std::vector<Tape::Ref> terms;
    terms.reserve(sequence.size());
    for (int k = 0; k < steps; ++k) {
      const Tape::Ref proj = t.matmul(sequence[static_cast<std::size_t>(k)], wproj);
      const Tape::Ref scaled = t.matmul(t.slice_cols(beta, k, 1), proj);
      terms.push_back(t.activation(scaled, Activation::leaky_relu, cfg.leaky));
    }
    heads.push_back(t.add_n(std::move(terms)));
  }
  return t.concat_cols(std::move(heads));
}

std::vector<Tape::Ref> Gdat::encode(Tape& t, const graph::SceneGraph& g,
                                    const std::vector<std::vector<Tape::Ref>>& node_attrs,
                                    const std::vector<std::vector<Tape::Ref>>& edge_attrs,
                                    AttentionDump* dump) const {
  if (node_attrs.size() != g.steps.size() || edge_attrs.size() != g.steps.size()) {
    throw std::invalid_argument("attribute arrays must cover every graph step");
  }
  std::vector<std::vector<Tape::Ref>> nodes = node_attrs;
  std::vector<std::vector<Tape::Ref>> edges = edge_attrs;
  for (int round = 0; round < cfg.rounds; ++round) {
    std::vector<std::vector<Tape::Ref>> next(nodes.size());
    for (std::size_t k = 0; k < g.steps.size(); ++k) {
      next[k] = topological_attention(t, g.steps[k], nodes[k], edges[k], round,
                                      static_cast<int>(k), dump);
    }
    if (round + 1 < cfg.rounds) {
      for (std::size_t k = 0; k < g.steps.size(); ++k) {
        edges[k] = edge_update(t, g.steps[k], next[k], edges[k]);
      }
    }
    nodes = std::move(next);
  }
  std::vector<Tape::Ref> out;
  out.reserve(static_cast<std::size_t>(g.n_agents));
  for (int i = 0; i < g.n_agents; ++i) {
    std::vector<Tape::Ref> seq;
    seq.reserve(nodes.size());
    for (const auto& step_nodes : nodes) {
      seq.push_back(step_nodes[static_cast<std::size_t>(i)]);
    }
    out.push_back(temporal_attention(t, seq, i, dump));
  }
  return out;
}

}  // namespace stgdat::model
