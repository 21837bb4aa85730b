// Acceptance run: one line per criterion, PASS or FAIL, with the measured
// quantity and the runtime against its budget. Exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "agsv/analytics.hpp"
#include "agsv/contrastive.hpp"
#include "agsv/downstream.hpp"
#include "agsv/errors.hpp"
#include "agsv/lars.hpp"
#include "agsv/random.hpp"
#include "agsv/service.hpp"
#include "agsv/store.hpp"
#include "agsv/trainer.hpp"
#include "support/oracles.hpp"
#include "support/schema_check.hpp"

// After the Eigen-based headers; see src/service/http.cpp.
#include <httplib.h>

namespace agsv {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Collects failed expectations and a few measured numbers for the report line.
struct Outcome {
  bool ok = true;
  std::vector<std::string> failures;
  std::vector<std::string> facts;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (failures.size() < 5) failures.push_back(what);
    }
  }
  void fact(const std::string& f) { facts.push_back(f); }
};

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

oracle::Rows to_rows(const Matrix& m) {
  oracle::Rows rows(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
  return rows;
}

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, double sigma = 1.0) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = sigma * rng.normal();
  return m;
}

std::vector<double> random_vec(Rng& rng, int d) {
  std::vector<double> v(static_cast<std::size_t>(d));
  for (double& x : v) x = rng.normal();
  return v;
}

// ------------------------------------------------------------------ criteria

Outcome nt_xent_exactness() {
  Outcome o;
  Rng rng(1);
  // One positive pair: the only candidate is the positive.
  for (double tau : {0.05, 0.1, 1.0}) {
    const auto r = nt_xent_loss(PairedBatch(gaussian(rng, 2, 7)), tau);
    o.expect(std::abs(r.total) <= 1e-12, "N=1 loss " + num(r.total) + " at tau " + num(tau));
  }
  // Two pairs, all four embeddings identical: ln 3 per pair.
  const double ln3 = std::log(3.0);
  for (double tau : {0.1, 0.5, 2.0}) {
    const auto r = nt_xent_loss(PairedBatch(Matrix::Constant(4, 5, 0.7)), tau);
    for (double l : r.per_pair) o.expect(std::abs(l - ln3) <= 1e-9, "identical per-pair " + num(l, 17));
  }
  // Orthogonal pairs at tau 1: ln(1 + 2/e), and the naive oracle agrees.
  Matrix m(4, 2);
  m << 1, 0, 0, 1, 1, 0, 0, 1;
  const double expected = std::log(1.0 + 2.0 / std::exp(1.0));
  const auto r = nt_xent_loss(PairedBatch(m), 1.0);
  for (double l : r.per_pair) o.expect(std::abs(l - expected) <= 1e-9, "orthogonal per-pair " + num(l, 17));
  const double naive = oracle::nt_xent(to_rows(m), 1.0);
  o.expect(std::abs(r.total - naive) <= 1e-9, "orthogonal total vs oracle " + num(r.total - naive));
  o.fact("orthogonal loss " + num(r.total, 12) + " vs ln(1+2/e) " + num(expected, 12));
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  Rng rng(2024);
  const double taus[] = {0.05, 0.1, 0.5, 1.0};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(7));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(31));
    const double tau = taus[trial % 4];
    const Matrix z = gaussian(rng, 2 * n, d);
    const Matrix g = nt_xent_gradient(PairedBatch(z), tau);
    const auto fd = oracle::central_difference([tau](const oracle::Rows& x) { return oracle::nt_xent(x, tau); },
                                               to_rows(z), 1e-6);
    const double err = oracle::max_relative_error(to_rows(g), fd);
    worst = std::max(worst, err);
    o.expect(err < 1e-5, "instance " + std::to_string(trial) + " relative error " + num(err));
  }
  o.fact("100 instances, max relative error " + num(worst, 3));
  return o;
}

Outcome lars_law() {
  Outcome o;
  Rng rng(77);
  LarsConfig cfg;
  cfg.learning_rate = 0.075;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.trust_coefficient = 0.001;
  double worst = 0.0;
  for (int layer = 0; layer < 20; ++layer) {
    ParamSet w;
    const std::size_t rows = 1 + rng.below(64), cols = 1 + rng.below(64);
    auto& t = w.add("layer" + std::to_string(layer), {rows, cols});
    const double wscale = std::exp(rng.uniform(-4, 4)), gscale = std::exp(rng.uniform(-6, 6));
    for (double& v : t.values) v = wscale * rng.normal();
    ParamSet g = w.zeros_like();
    for (double& v : g[0].values) v = gscale * rng.normal();
    const Vector before = w[0].as_vector();
    LarsState state;
    lars_step(w, g, state, cfg);
    const double ratio = (w[0].as_vector() - before).norm() / before.norm();
    const double rel = std::abs(ratio / (cfg.learning_rate * cfg.trust_coefficient) - 1.0);
    worst = std::max(worst, rel);
    o.expect(rel <= 1e-9, "layer " + std::to_string(layer) + " relative deviation " + num(rel));
  }
  o.fact("20 layers, max relative deviation " + num(worst, 3));
  return o;
}

// Desk-scale fixture shared by the transfer and convergence criteria.
struct ProbeFixture {
  Matrix ssl, random;
  std::vector<int> labels;
};

const ProbeFixture& probe_fixture() {
  static const ProbeFixture fixture = [] {
    const SyntheticCorpus corpus = two_family_corpus(64, 16, 16, 3, 1);
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.epochs = 30;
    const PretrainResult trained = pretrain(corpus.images, cfg);
    return ProbeFixture{encode(trained.checkpoint, corpus.images), encode(initial_checkpoint(cfg), corpus.images),
                        corpus.labels};
  }();
  return fixture;
}

FinetuneConfig probe_config() {
  FinetuneConfig cfg;
  cfg.seed = 7;
  cfg.epochs = 200;
  cfg.loss_threshold = 0.5;
  return cfg;
}

Outcome transfer_trend() {
  Outcome o;
  const ProbeFixture& f = probe_fixture();
  const double fractions[] = {0.1, 1.0};
  const auto ssl = label_efficiency_experiment({f.ssl, f.labels, 2}, fractions, probe_config());
  const auto rnd = label_efficiency_experiment({f.random, f.labels, 2}, fractions, probe_config());
  o.expect(ssl[0].accuracy >= rnd[0].accuracy,
           "10% labels: SSL " + num(ssl[0].accuracy) + " < random " + num(rnd[0].accuracy));
  o.expect(ssl[1].accuracy >= ssl[0].accuracy,
           "SSL 100% " + num(ssl[1].accuracy) + " < 10% " + num(ssl[0].accuracy));
  o.fact("10%: SSL " + num(ssl[0].accuracy, 4) + " vs random " + num(rnd[0].accuracy, 4) + "; SSL 100% " +
         num(ssl[1].accuracy, 4) + " (test n=" + std::to_string(ssl[0].test_size) + ")");
  return o;
}

Outcome convergence_trend() {
  Outcome o;
  const ProbeFixture& f = probe_fixture();
  const auto [ssl, rnd] = convergence_compare(f.ssl, f.random, f.labels, 2, 0.5, probe_config());
  auto text = [](const RunReport& r) {
    return r.epochs_to_threshold ? std::to_string(*r.epochs_to_threshold) : std::string("never");
  };
  o.expect(ssl.epochs_to_threshold.has_value(), "SSL never reaches loss 0.5");
  if (ssl.epochs_to_threshold && rnd.epochs_to_threshold)
    o.expect(*ssl.epochs_to_threshold <= *rnd.epochs_to_threshold, "SSL " + text(ssl) + " > random " + text(rnd));
  o.fact("epochs to loss 0.5: SSL " + text(ssl) + " vs random " + text(rnd));
  return o;
}

Outcome retrieval() {
  Outcome o;
  Rng rng(4);
  std::size_t compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(24));
    const std::size_t n = 1 + rng.below(512);
    EmbeddingStore s;
    std::vector<std::string> ids;
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      // Duplicated vectors force ties.
      const auto v = (i > 0 && rng.below(8) == 0) ? s.vectors()[rng.below(i)] : random_vec(rng, d);
      const std::string id = "k" + std::to_string(rng.below(1u << 30)) + "_" + std::to_string(i);
      s.insert(id, v);
      ids.push_back(id);
      rows.push_back(s.get(id)->vector);
    }
    const auto q = random_vec(rng, d);
    const std::size_t k = 1 + rng.below(n + 5);
    const auto hits = s.exact_search(q, k);
    const auto truth = oracle::brute_force_top_k(ids, rows, q, k);
    bool same = hits.size() == truth.size();
    for (std::size_t i = 0; same && i < hits.size(); ++i)
      same = hits[i].id == truth[i].first && hits[i].similarity == truth[i].second;
    o.expect(same, "store " + std::to_string(trial) + " order differs from brute force");
    compared += hits.size();
  }

  Rng vec_rng(10);
  EmbeddingStore big;
  std::vector<std::string> ids;
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 10000; ++i) {
    const std::string id = "id" + std::to_string(i);
    big.insert(id, random_vec(vec_rng, 128));
    ids.push_back(id);
    rows.push_back(big.get(id)->vector);
  }
  big.build_index();
  Rng qrng(11);
  std::size_t found = 0;
  for (int q = 0; q < 100; ++q) {
    const auto v = random_vec(qrng, 128);
    std::set<std::string> truth;
    for (const auto& [id, sim] : oracle::brute_force_top_k(ids, rows, v, 10)) truth.insert(id);
    for (const auto& h : big.ann_search(v, 10)) found += truth.count(h.id);
  }
  const double recall = static_cast<double>(found) / 1000.0;
  o.expect(recall >= 0.95, "ANN recall@10 " + num(recall));
  o.fact("200 stores exact (" + std::to_string(compared) + " hits), ANN recall@10 " + num(recall, 4));
  return o;
}

Outcome outlier_detection() {
  Outcome o;
  // 95 points from N(0, sigma^2 I) plus 5 displaced by 10 sigma along random
  // directions, shuffled.
  constexpr Eigen::Index d = 8;
  constexpr double sigma = 0.1;
  Rng rng(2718);
  const Matrix base = gaussian(rng, 100, d, sigma);
  std::vector<std::size_t> order(100);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  Matrix points(100, d);
  std::set<std::size_t> planted;
  for (std::size_t i = 0; i < 100; ++i) {
    RowVector row = base.row(static_cast<Eigen::Index>(i));
    if (i >= 95) {
      const RowVector dir = gaussian(rng, 1, d);
      row += 10.0 * sigma * dir / dir.norm();
      planted.insert(order[i]);
    }
    points.row(static_cast<Eigen::Index>(order[i])) = row;
  }
  OutlierConfig cfg;
  cfg.seed = 5;
  const OutlierReport r = detect_outliers(points, cfg);
  std::size_t hit = 0, false_pos = 0;
  for (std::size_t i : r.flagged) (planted.count(i) ? hit : false_pos)++;
  const double recall = static_cast<double>(hit) / 5.0;
  const double fpr = static_cast<double>(false_pos) / 95.0;
  o.expect(recall >= 0.90, "recall " + num(recall));
  o.expect(fpr <= 0.05, "false-positive rate " + num(fpr));
  o.fact("recall " + num(recall, 3) + ", false-positive rate " + num(fpr, 3));
  return o;
}

Outcome frame_triage() {
  Outcome o;
  Rng rng(99);
  const Eigen::Index n = 300, d = 16;
  const RowVector mode_a = gaussian(rng, 1, d), mode_b = gaussian(rng, 1, d);
  Matrix frames(n, d);
  std::vector<int> truth;
  Eigen::Index t = 0;
  int mode = 0;
  while (t < n) {
    // Runs of 3 to 15 frames in one mode, then a switch.
    const Eigen::Index run = std::min<Eigen::Index>(n - t, 3 + static_cast<Eigen::Index>(rng.below(13)));
    for (Eigen::Index i = 0; i < run; ++i, ++t) {
      frames.row(t) = (mode ? mode_b : mode_a) * 3.0 + gaussian(rng, 1, d, 0.3);
      truth.push_back(mode);
    }
    mode = 1 - mode;
  }
  const FramePartition p = partition_frames(frames, KeepGroup::kLarger, 1);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) agree += p.labels[i] == truth[i];
  const double agreement =
      static_cast<double>(std::max(agree, truth.size() - agree)) / static_cast<double>(truth.size());
  o.expect(agreement >= 0.98, "partition agreement " + num(agreement));

  std::size_t idempotent = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng walk(1000 + seed);
    const Eigen::Index len = 20 + static_cast<Eigen::Index>(walk.below(80));
    const Eigen::Index dim = 2 + static_cast<Eigen::Index>(walk.below(30));
    const double threshold = walk.uniform(0.5, 0.99);
    Matrix seq(len, dim);
    RowVector cur = gaussian(walk, 1, dim);
    for (Eigen::Index i = 0; i < len; ++i) {
      cur += gaussian(walk, 1, dim, walk.uniform(0.05, 0.6));
      seq.row(i) = cur;
    }
    const auto kept = dedup_frames(seq, threshold);
    Matrix sub(static_cast<Eigen::Index>(kept.size()), dim);
    for (std::size_t i = 0; i < kept.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = seq.row(kept[i]);
    std::vector<std::size_t> all(kept.size());
    std::iota(all.begin(), all.end(), 0);
    const bool same = dedup_frames(sub, threshold) == all;
    idempotent += same;
    o.expect(same, "dedup not idempotent on sequence " + std::to_string(seed));
  }
  o.fact("agreement " + num(agreement, 4) + ", dedup idempotent on " + std::to_string(idempotent) + "/50");
  return o;
}

Outcome pca_identities() {
  Outcome o;
  double worst_ortho = 0.0, worst_rel = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(500 + seed);
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.below(300));
    const Eigen::Index d = 4 + static_cast<Eigen::Index>(rng.below(40));
    Matrix pts = gaussian(rng, n, d);
    for (Eigen::Index j = 0; j < d; ++j) pts.col(j) *= std::exp(rng.uniform(-1, 1));
    const RowVector shift = gaussian(rng, 1, d, 5.0);
    pts.rowwise() += shift;

    const Projection3D p = project_3d(pts);
    const double ortho = (p.basis * p.basis.transpose() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff();
    worst_ortho = std::max(worst_ortho, ortho);
    o.expect(ortho <= 1e-8, "cloud " + std::to_string(seed) + " orthonormality " + num(ortho));

    // Reconstruction error recomputed here, against the tail of an
    // independent Jacobi spectrum of the covariance.
    const RowVector mean = pts.colwise().mean();
    const Matrix centered = pts.rowwise() - mean;
    const Matrix residual = centered - centered * p.basis.transpose() * p.basis;
    const double error = residual.squaredNorm() / static_cast<double>(n);
    const auto spectrum = oracle::jacobi_eigenvalues(to_rows(centered.transpose() * centered / static_cast<double>(n)));
    const double tail = std::accumulate(spectrum.begin() + 3, spectrum.end(), 0.0);
    const double rel = std::abs(error - tail) / tail;
    worst_rel = std::max(worst_rel, rel);
    o.expect(rel <= 1e-6, "cloud " + std::to_string(seed) + " reconstruction vs discarded " + num(rel));
    o.expect(std::abs(p.discarded_variance - tail) <= 1e-6 * tail, "cloud " + std::to_string(seed) + " discarded variance");
  }
  o.fact("50 clouds, orthonormality " + num(worst_ortho, 3) + ", reconstruction rel. error " + num(worst_rel, 3));
  return o;
}

std::string png_bytes(const Image& img) {
  const auto b = encode_png(img);
  return {b.begin(), b.end()};
}

Outcome persistence_and_service() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "agsv_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Store round trip.
  {
    Rng rng(13);
    EmbeddingStore s;
    for (int i = 0; i < 1000; ++i) s.insert("r" + std::to_string(i), random_vec(rng, 32), {{"i", std::to_string(i)}});
    s.insert("unicode-\xc3\xa9", std::vector<double>(32, 1.0), {{"note", "tab\tand\nnewline"}, {"empty", ""}});
    s.save(dir / "roundtrip.agdb");
    const EmbeddingStore back = EmbeddingStore::load(dir / "roundtrip.agdb");
    o.expect(back.records() == s.records(), "records differ after reload");
    o.expect(back.serialize() == s.serialize(), "bytes differ after reload");
  }

  // Service over HTTP.
  TrainConfig tcfg;
  tcfg.seed = 4;
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.store_path = dir / "service.agdb";
  Service svc(cfg, initial_checkpoint(tcfg));
  HttpServer server(svc);
  const int port = server.bind();
  std::thread runner([&] { server.run(); });
  while (!server.running()) std::this_thread::yield();

  httplib::Client client("127.0.0.1", port);
  std::size_t validated = 0;
  auto check = [&](const httplib::Result& res, int status, const std::string& schema_name, const std::string& what) {
    if (!res) {
      o.expect(false, what + ": no response");
      return json();
    }
    o.expect(res->status == status, what + ": status " + std::to_string(res->status));
    const json body = json::parse(res->body, nullptr, false);
    const auto errors = schema::validate(schema::load(schema_name), body);
    o.expect(errors.empty(), what + ": " + (errors.empty() ? "" : errors.front()));
    ++validated;
    return body;
  };
  auto form = [](const std::string& bytes, std::vector<std::pair<std::string, std::string>> fields = {}) {
    httplib::MultipartFormDataItems items{{"image", bytes, "upload.png", "image/png"}};
    for (auto& [k, v] : fields) items.push_back({k, v, "", ""});
    return items;
  };

  const SyntheticCorpus corpus = two_family_corpus(8, 16, 16, 3, 21);
  check(client.Get("/v1/stats"), 200, "stats.response.schema.json", "stats (empty)");
  check(client.Post("/v1/search", form(png_bytes(corpus.images[0]))), 409, "error.schema.json", "search (empty)");
  for (std::size_t i = 0; i < corpus.images.size(); ++i)
    check(client.Post("/v1/ingest", form(png_bytes(corpus.images[i]),
                                         {{"id", "img" + std::to_string(i)},
                                          {"metadata", json{{"family", std::to_string(corpus.labels[i])}}.dump()}})),
          200, "ingest.response.schema.json", "ingest " + std::to_string(i));
  check(client.Post("/v1/ingest", form(png_bytes(corpus.images[0]), {{"id", "img0"}})), 409, "error.schema.json",
        "duplicate ingest");
  check(client.Post("/v1/ingest", form("not an image")), 415, "error.schema.json", "undecodable ingest");

  // Round trip: every ingested image is its own top hit.
  double worst = 0.0;
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    const json body = check(client.Post("/v1/search", form(png_bytes(corpus.images[i]), {{"k", "5"}})), 200,
                            "search.response.schema.json", "search " + std::to_string(i));
    if (!body.is_object() || body["hits"].empty()) continue;
    const json& top = body["hits"][0];
    o.expect(top["id"] == "img" + std::to_string(i), "image " + std::to_string(i) + " top hit " + top["id"].dump());
    const double sim = top["similarity"].get<double>();
    worst = std::max(worst, std::abs(sim - 1.0));
    o.expect(std::abs(sim - 1.0) <= 1e-4, "image " + std::to_string(i) + " similarity " + num(sim, 10));
  }
  check(client.Post("/v1/search", form(png_bytes(corpus.images[0]), {{"mode", "ann"}})), 409, "error.schema.json",
        "ann before index");
  check(client.Post("/v1/admin/rebuild-index"), 200, "rebuild-index.response.schema.json", "rebuild-index");
  check(client.Post("/v1/search", form(png_bytes(corpus.images[3]), {{"mode", "ann"}, {"k", "4"}})), 200,
        "search.response.schema.json", "ann search");
  check(client.Post("/v1/search", form(png_bytes(corpus.images[3]), {{"k", "zero"}})), 400, "error.schema.json",
        "bad k");
  check(client.Get("/v1/stats"), 200, "stats.response.schema.json", "stats");
  check(client.Get("/v1/outliers"), 200, "outliers.response.schema.json", "outliers");
  check(client.Get("/v1/outliers?method=minority-cluster&clusters=2"), 200, "outliers.response.schema.json",
        "outliers minority");
  check(client.Get("/v1/outliers?method=nope"), 400, "error.schema.json", "outliers bad method");
  check(client.Get("/v1/projection"), 200, "projection.response.schema.json", "projection");
  check(client.Get("/v1/unknown"), 404, "error.schema.json", "unknown route");

  server.stop();
  runner.join();
  svc.persist();
  const EmbeddingStore reloaded = EmbeddingStore::load(cfg.store_path);
  o.expect(reloaded.records() == svc.store().records(), "persisted service store differs");
  o.fact("round trip bit-exact, " + std::to_string(validated) + " responses schema-valid, max |sim-1| " +
         num(worst, 3));
  return o;
}

struct Criterion {
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace agsv

int main() {
  using namespace agsv;
  const std::vector<Criterion> criteria{
      {"nt-xent exactness", 1, nt_xent_exactness},
      {"gradient suite", 30, gradient_suite},
      {"lars law", 1, lars_law},
      {"transfer-learning trend", 300, transfer_trend},
      {"convergence trend", 300, convergence_trend},
      {"retrieval correctness", 120, retrieval},
      {"outlier detection", 10, outlier_detection},
      {"frame triage", 10, frame_triage},
      {"pca identities", 10, pca_identities},
      {"persistence & service contract", 60, persistence_and_service},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.expect(secs < c.budget_seconds, "runtime " + num(secs, 3) + " s over budget");
    std::ostringstream line;
    line << (o.ok ? "PASS" : "FAIL") << "  " << c.name << "  (" << num(secs, 3) << " s / " << c.budget_seconds
         << " s)";
    for (const auto& f : o.facts) line << "  " << f;
    for (const auto& f : o.failures) line << "  [" << f << "]";
    std::printf("%s\n", line.str().c_str());
    std::fflush(stdout);
    failed += !o.ok;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
