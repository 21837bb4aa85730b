#include <algorithm>
#include <cmath>
#include <queue>

#include <Eigen/Core>

#include "agsv/errors.hpp"
#include "agsv/random.hpp"
#include "agsv/store.hpp"
#include "similarity.hpp"

namespace agsv {

bool ranks_before(const SearchHit& a, const SearchHit& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

void AnnParams::validate() const {
  if (max_neighbors < 2 || max_neighbors > 256)
    throw ParameterError("max_neighbors must lie in [2, 256]");
  if (build_beam < 1 || build_beam > 100000) throw ParameterError("build_beam must lie in [1, 100000]");
  if (search_beam < 1 || search_beam > 100000)
    throw ParameterError("search_beam must lie in [1, 100000]");
}

float AnnIndex::sim(const float* a, const float* b) const {
  return Eigen::Map<const Eigen::VectorXf>(a, dim_).dot(Eigen::Map<const Eigen::VectorXf>(b, dim_));
}

namespace {

// Orders candidates so that the best (highest similarity, then lowest node)
// compares greatest.
struct Worse {
  template <typename C>
  bool operator()(const C& a, const C& b) const {
    if (a.similarity != b.similarity) return a.similarity < b.similarity;
    return a.node > b.node;
  }
};

struct Better {
  template <typename C>
  bool operator()(const C& a, const C& b) const {
    return Worse{}(b, a);
  }
};

}  // namespace

std::vector<AnnIndex::Candidate> AnnIndex::search_layer(const float* query,
                                                        std::vector<std::uint32_t> entries,
                                                        std::size_t beam, int level) const {
  std::vector<char> visited(ids_.size(), 0);
  // frontier: best on top; found: worst on top.
  std::priority_queue<Candidate, std::vector<Candidate>, Worse> frontier;
  std::priority_queue<Candidate, std::vector<Candidate>, Better> found;
  for (std::uint32_t e : entries) {
    if (visited[e]) continue;
    visited[e] = 1;
    const Candidate c{sim(query, row(e)), e};
    frontier.push(c);
    found.push(c);
    if (found.size() > beam) found.pop();
  }
  while (!frontier.empty()) {
    const Candidate best = frontier.top();
    if (found.size() >= beam && Worse{}(best, found.top())) break;
    frontier.pop();
    for (std::uint32_t n : links_[best.node][static_cast<std::size_t>(level)]) {
      if (visited[n]) continue;
      visited[n] = 1;
      const Candidate c{sim(query, row(n)), n};
      if (found.size() < beam || Worse{}(found.top(), c)) {
        frontier.push(c);
        found.push(c);
        if (found.size() > beam) found.pop();
      }
    }
  }
  std::vector<Candidate> out;
  out.reserve(found.size());
  while (!found.empty()) {
    out.push_back(found.top());
    found.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Keeps a candidate only if it is closer to the base than to every neighbor
// already kept, which spreads links across directions.
std::vector<std::uint32_t> AnnIndex::select_neighbors(const std::vector<Candidate>& candidates,
                                                      std::size_t limit) const {
  std::vector<std::uint32_t> kept;
  for (const Candidate& c : candidates) {
    if (kept.size() >= limit) break;
    bool diverse = true;
    for (std::uint32_t k : kept)
      if (sim(row(c.node), row(k)) > c.similarity) {
        diverse = false;
        break;
      }
    if (diverse) kept.push_back(c.node);
  }
  return kept;
}

void AnnIndex::insert_node(std::uint32_t node, int level) {
  links_[node].resize(static_cast<std::size_t>(level) + 1);
  if (top_level_ < 0) {
    entry_ = node;
    top_level_ = level;
    return;
  }
  const float* q = row(node);
  std::vector<std::uint32_t> entries{static_cast<std::uint32_t>(entry_)};
  for (int lc = top_level_; lc > level; --lc)
    entries = {search_layer(q, entries, 1, lc).front().node};
  for (int lc = std::min(top_level_, level); lc >= 0; --lc) {
    const auto found = search_layer(q, entries, params_.build_beam, lc);
    const auto lvl = static_cast<std::size_t>(lc);
    links_[node][lvl] = select_neighbors(found, params_.max_neighbors);
    for (std::uint32_t n : links_[node][lvl]) {
      auto& back = links_[n][lvl];
      back.push_back(node);
      if (back.size() > max_links(lc)) {
        std::vector<Candidate> cands;
        cands.reserve(back.size());
        for (std::uint32_t b : back) cands.push_back({sim(row(n), row(b)), b});
        std::sort(cands.begin(), cands.end(), Better{});
        back = select_neighbors(cands, max_links(lc));
      }
    }
    entries.clear();
    for (const Candidate& c : found) entries.push_back(c.node);
  }
  if (level > top_level_) {
    entry_ = node;
    top_level_ = level;
  }
}

namespace {

void mark_reachable(const std::vector<std::vector<std::vector<std::uint32_t>>>& links,
                    std::size_t from, std::vector<char>& seen) {
  std::vector<std::size_t> stack;
  if (!seen[from]) {
    seen[from] = 1;
    stack.push_back(from);
  }
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::uint32_t n : links[v][0])
      if (!seen[n]) {
        seen[n] = 1;
        stack.push_back(n);
      }
  }
}

}  // namespace

std::size_t AnnIndex::reachable_count() const {
  if (ids_.empty()) return 0;
  std::vector<char> seen(ids_.size(), 0);
  mark_reachable(links_, entry_, seen);
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
}

// Pruning can orphan a node on layer 0. Each orphan gets an incoming link
// from the closest reachable node that still has room.
void AnnIndex::repair_connectivity() {
  std::vector<char> seen(ids_.size(), 0);
  mark_reachable(links_, entry_, seen);
  for (std::size_t u = 0; u < ids_.size(); ++u) {
    if (seen[u]) continue;
    auto found = search_layer(row(u), {static_cast<std::uint32_t>(entry_)}, params_.build_beam, 0);
    std::optional<std::uint32_t> host;
    for (const Candidate& c : found)
      if (links_[c.node][0].size() < max_links(0)) {
        host = c.node;
        break;
      }
    if (!host) {
      float best = -2.0f;
      for (std::size_t v = 0; v < ids_.size(); ++v) {
        if (!seen[v] || links_[v][0].size() >= max_links(0)) continue;
        const float s = sim(row(u), row(v));
        if (s > best) {
          best = s;
          host = static_cast<std::uint32_t>(v);
        }
      }
    }
    if (!host) throw std::logic_error("proximity graph has no node with a free layer-0 slot");
    links_[*host][0].push_back(static_cast<std::uint32_t>(u));
    mark_reachable(links_, u, seen);
  }
}

AnnIndex AnnIndex::build(std::vector<std::string> ids, std::vector<float> vectors, int dim,
                         const AnnParams& params) {
  params.validate();
  if (ids.empty()) throw EmptyStore();
  if (dim < 1 || vectors.size() != ids.size() * static_cast<std::size_t>(dim))
    throw ShapeError("index snapshot size does not match its dimension");
  AnnIndex index;
  index.ids_ = std::move(ids);
  index.vectors_ = std::move(vectors);
  index.dim_ = dim;
  index.params_ = params;
  index.links_.resize(index.ids_.size());
  const double level_scale = 1.0 / std::log(static_cast<double>(params.max_neighbors));
  for (std::size_t i = 0; i < index.ids_.size(); ++i) {
    Rng rng(derive_seed({params.seed, i}));
    const double u = 1.0 - rng.uniform();  // (0, 1]
    const int level = std::min(32, static_cast<int>(std::floor(-std::log(u) * level_scale)));
    index.insert_node(static_cast<std::uint32_t>(i), level);
  }
  index.repair_connectivity();
  return index;
}

std::vector<SearchHit> AnnIndex::search(std::span<const double> query, std::size_t k,
                                        std::optional<std::size_t> beam) const {
  const std::size_t ef = beam.value_or(params_.search_beam);
  if (k < 1) throw ParameterError("k must be >= 1");
  if (ef < 1) throw ParameterError("search beam must be >= 1");
  if (k > ef)
    throw ParameterError("k (" + std::to_string(k) + ") exceeds the search beam (" +
                         std::to_string(ef) + ")");
  const std::vector<double> unit = detail::unit_query(query, dim_);
  std::vector<float> q(unit.begin(), unit.end());

  std::vector<std::uint32_t> entries{static_cast<std::uint32_t>(entry_)};
  for (int lc = top_level_; lc > 0; --lc) entries = {search_layer(q.data(), entries, 1, lc).front().node};
  const auto found = search_layer(q.data(), entries, ef, 0);

  std::vector<SearchHit> hits;
  hits.reserve(found.size());
  for (const Candidate& c : found) hits.push_back({ids_[c.node], detail::cosine(unit, row(c.node))});
  std::sort(hits.begin(), hits.end(), ranks_before);
  if (hits.size() > k) hits.resize(k);
  return hits;
}

}  // namespace agsv
