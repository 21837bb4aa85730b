#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include "agsv/analytics.hpp"
#include "agsv/checkpoint.hpp"
#include "agsv/cli.hpp"
#include "agsv/downstream.hpp"
#include "agsv/errors.hpp"
#include "agsv/random.hpp"
#include "agsv/service.hpp"
#include "agsv/store.hpp"
#include "agsv/trainer.hpp"

// After the Eigen-based headers; see src/service/http.cpp.
#include <httplib.h>

namespace agsv {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result agsv_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "agsv_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

// Small corpus plus a briefly pretrained checkpoint, all made through the CLI.
struct Corpus {
  fs::path dir, images, manifest, ckpt, store;
};

Corpus make_corpus(const std::string& name, std::size_t per_family = 16, std::size_t epochs = 5) {
  Corpus c;
  c.dir = temp_dir(name);
  c.images = c.dir / "images";
  c.manifest = c.images / "manifest.tsv";
  c.ckpt = c.dir / "model.ckpt";
  c.store = c.dir / "store.agdb";
  EXPECT_EQ(agsv_cli({"synth", "--out", c.images.string(), "--per-family", std::to_string(per_family), "--seed", "1"}).code, 0);
  EXPECT_EQ(agsv_cli({"pretrain", "--data", c.images.string(), "--out", c.ckpt.string(), "--epochs",
                      std::to_string(epochs), "--seed", "3"})
                .code,
            0);
  EXPECT_EQ(agsv_cli({"embed", "--ckpt", c.ckpt.string(), "--images", c.manifest.string(), "--out", c.store.string()}).code, 0);
  return c;
}

// Store of random unit-ish vectors with ids v0.. and metadata label=a|b.
fs::path vector_store(const fs::path& dir, const Matrix& points) {
  EmbeddingStore store;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vector row = points.row(i).transpose();
    store.insert("v" + std::to_string(i), std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                 {{"label", i % 4 == 0 ? "a" : "b"}});
  }
  const fs::path p = dir / "vectors.agdb";
  store.save(p);
  return p;
}

// The store's own view of the points (float32, unit norm), for oracles.
Matrix stored_points(const fs::path& p, std::vector<std::string>* ids = nullptr,
                     std::vector<Metadata>* metadata = nullptr) {
  const auto records = EmbeddingStore::load(p).records();
  Matrix m(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(records[0].vector.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = 0; j < records[i].vector.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[i].vector[j];
    if (ids) ids->push_back(records[i].id);
    if (metadata) metadata->push_back(records[i].metadata);
  }
  return m;
}

Matrix gaussian_cloud(std::size_t n, int dim, std::uint64_t seed, double sigma = 0.1) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = (j == 0 ? 1.0 : 0.0) + sigma * rng.normal();
  return m;
}

// ------------------------------------------------------------------ help

const std::vector<std::string> kSubcommands{"pretrain", "embed", "search", "outliers", "project",
                                            "frames", "balance", "finetune", "serve", "synth"};

TEST(CliHelp, MatchesGoldenFiles) {
  const fs::path golden = AGSV_GOLDEN_DIR;
  const Result top = agsv_cli({"--help"});
  EXPECT_EQ(top.code, 0);
  EXPECT_EQ(top.out, slurp(golden / "agsv.txt"));
  for (const auto& sub : kSubcommands) {
    const Result r = agsv_cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_EQ(r.out, slurp(golden / (sub + ".txt"))) << sub;
  }
}

TEST(CliHelp, ListsEveryDocumentedFlag) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"pretrain", {"--data", "--config", "--out", "--loss-csv", "--epochs", "--seed"}},
      {"embed", {"--ckpt", "--images", "--out", "--skip-bad"}},
      {"search", {"--store", "--query", "--ckpt", "-k", "--ann", "--beam", "--seed"}},
      {"outliers", {"--store", "--method", "--clusters", "--sigma", "--minority-fraction", "--threshold", "--out",
                    "--plot", "--seed"}},
      {"project", {"--store", "--out", "--plot", "--color-by"}},
      {"frames", {"--store", "--keep", "--dedup-threshold", "--out", "--seed"}},
      {"balance", {"--store", "--key", "--clusters", "--seed"}},
      {"finetune", {"--ckpt", "--data", "--fraction", "--label-key", "--hidden", "--epochs", "--batch-size", "--lr",
                    "--threshold", "--test-fraction", "--compare-scratch", "--whole-network", "--encoder-lr",
                    "--report", "--seed"}},
      {"serve", {"--config", "--port-file"}},
      {"synth", {"--out", "--per-family", "--size", "--channels", "--seed"}},
  };
  const std::string top = agsv_cli({"--help"}).out;
  for (const auto& [sub, list] : flags) {
    EXPECT_NE(top.find(sub), std::string::npos) << sub;
    const std::string help = agsv_cli({sub, "--help"}).out;
    for (const auto& flag : list) EXPECT_NE(help.find(flag), std::string::npos) << sub << " " << flag;
  }
}

TEST(CliUsage, ExitOne) {
  EXPECT_EQ(agsv_cli({}).code, 1);
  EXPECT_EQ(agsv_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(agsv_cli({"search", "--store", "x"}).code, 1);  // missing required flags
  EXPECT_EQ(agsv_cli({"synth", "--out", "x", "--per-family", "many"}).code, 1);
  EXPECT_EQ(agsv_cli({"synth", "--out", "x", "--bogus"}).code, 1);
}

// ------------------------------------------------------------------ synth / pretrain

TEST(CliSynth, WritesImagesAndManifest) {
  const fs::path dir = temp_dir("synth");
  const Result r = agsv_cli({"synth", "--out", (dir / "c").string(), "--per-family", "5", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto entries = read_manifest(dir / "c" / "manifest.tsv");
  ASSERT_EQ(entries.size(), 10u);
  std::map<std::string, int> labels;
  for (const auto& e : entries) {
    EXPECT_TRUE(fs::exists(e.path));
    ++labels[e.metadata.at("label")];
  }
  EXPECT_EQ(labels["textured"], 5);
  EXPECT_EQ(labels["smooth"], 5);
  // Pixels are the corpus generator's, through 8-bit PNG.
  const SyntheticCorpus corpus = two_family_corpus(5, 16, 16, 3, 2);
  const Image back = read_image(entries[3].path, 16, 16, 3);
  for (std::size_t i = 0; i < back.size(); ++i)
    EXPECT_NEAR(back.values()[i], corpus.images[3].values()[i], 0.5 / 255 + 1e-6);
}

TEST(CliSynth, SeedFromEnvironment) {
  const fs::path dir = temp_dir("synth_env");
  ASSERT_EQ(agsv_cli({"synth", "--out", (dir / "flag").string(), "--per-family", "2", "--seed", "9"}).code, 0);
  ::setenv("SEED", "9", 1);
  const Result r = agsv_cli({"synth", "--out", (dir / "env").string(), "--per-family", "2"});
  ::unsetenv("SEED");
  ASSERT_EQ(r.code, 0);
  for (int i = 0; i < 4; ++i) {
    const std::string name = "img_0000" + std::to_string(i) + ".png";
    EXPECT_EQ(slurp(dir / "flag" / name), slurp(dir / "env" / name));
  }
}

TEST(CliPretrain, WritesCheckpointAndDecreasingLoss) {
  const fs::path dir = temp_dir("pretrain");
  ASSERT_EQ(agsv_cli({"synth", "--out", (dir / "c").string(), "--per-family", "32", "--seed", "1"}).code, 0);
  write(dir / "train.json", R"({"batch_pairs": 16, "epochs": 12, "seed": 3})");
  const Result r = agsv_cli({"pretrain", "--data", (dir / "c").string(), "--config", (dir / "train.json").string(),
                             "--out", (dir / "m.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const EncoderCheckpoint ckpt = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ckpt.config.epochs, 12u);
  const auto rows = lines(slurp(dir / "m.loss.csv"));
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[0], "epoch,mean_loss");
  const double first = std::stod(split(rows[1], ',')[1]);
  const double last = std::stod(split(rows.back(), ',')[1]);
  EXPECT_LT(last, first);
}

TEST(CliPretrain, ZeroEpochsWritesInitialWeights) {
  const fs::path dir = temp_dir("pretrain0");
  ASSERT_EQ(agsv_cli({"synth", "--out", (dir / "c").string(), "--per-family", "4"}).code, 0);
  const Result r = agsv_cli({"pretrain", "--data", (dir / "c").string(), "--out", (dir / "m.ckpt").string(),
                             "--epochs", "0", "--seed", "11"});
  ASSERT_EQ(r.code, 0) << r.err;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 11;
  const EncoderCheckpoint expected = deserialize_checkpoint(serialize_checkpoint(initial_checkpoint(cfg)));
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt"), expected);
}

TEST(CliPretrain, DeterministicGivenSeed) {
  const fs::path dir = temp_dir("pretrain_det");
  ASSERT_EQ(agsv_cli({"synth", "--out", (dir / "c").string(), "--per-family", "8"}).code, 0);
  for (const char* name : {"a.ckpt", "b.ckpt"})
    ASSERT_EQ(agsv_cli({"pretrain", "--data", (dir / "c").string(), "--out", (dir / name).string(), "--epochs", "2",
                        "--seed", "5"})
                  .code,
              0);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(slurp(dir / "a.loss.csv"), slurp(dir / "b.loss.csv"));
}

TEST(CliPretrain, DataErrorsExitTwo) {
  const fs::path dir = temp_dir("pretrain_bad");
  EXPECT_EQ(agsv_cli({"pretrain", "--data", (dir / "missing").string(), "--out", (dir / "m").string()}).code, 2);
  fs::create_directories(dir / "empty");
  write(dir / "empty" / "notes.txt", "no images here");
  EXPECT_EQ(agsv_cli({"pretrain", "--data", (dir / "empty").string(), "--out", (dir / "m").string()}).code, 2);
  fs::create_directories(dir / "broken");
  write(dir / "broken" / "a.png", "not a png");
  EXPECT_EQ(agsv_cli({"pretrain", "--data", (dir / "broken").string(), "--out", (dir / "m").string()}).code, 2);
  write(dir / "bad.json", "{\"epochs\": ");
  ASSERT_EQ(agsv_cli({"synth", "--out", (dir / "c").string(), "--per-family", "2"}).code, 0);
  EXPECT_EQ(agsv_cli({"pretrain", "--data", (dir / "c").string(), "--config", (dir / "bad.json").string(), "--out",
                      (dir / "m").string()})
                .code,
            2);
  write(dir / "neg.json", R"({"temperature": -1})");
  EXPECT_EQ(agsv_cli({"pretrain", "--data", (dir / "c").string(), "--config", (dir / "neg.json").string(), "--out",
                      (dir / "m").string()})
                .code,
            1);
}

// ------------------------------------------------------------------ embed

TEST(CliEmbed, OneRecordPerManifestLine) {
  const Corpus c = make_corpus("embed", 5, 1);
  const EmbeddingStore store = EmbeddingStore::load(c.store);
  ASSERT_EQ(store.size(), 10u);
  const EncoderCheckpoint ckpt = load_checkpoint(c.ckpt);
  for (const auto& e : read_manifest(c.manifest)) {
    const auto rec = store.get(e.id);
    ASSERT_TRUE(rec.has_value()) << e.id;
    EXPECT_EQ(rec->metadata, e.metadata);
    const std::vector<Image> img{read_image(e.path, 16, 16, 3)};
    const Vector h = encode(ckpt, img).row(0).transpose();
    const Vector u = h / h.norm();
    for (Eigen::Index j = 0; j < u.size(); ++j) EXPECT_NEAR(rec->vector[j], u(j), 1e-6);
  }
}

TEST(CliEmbed, DuplicateIdsExitTwo) {
  const Corpus c = make_corpus("embed_dup", 2, 1);
  write(c.dir / "dup.tsv", "a\timages/img_00000.png\nb\timages/img_00001.png\na\timages/img_00002.png\n");
  const Result r = agsv_cli({"embed", "--ckpt", c.ckpt.string(), "--images", (c.dir / "dup.tsv").string(), "--out",
                             (c.dir / "dup.agdb").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'a'"), std::string::npos);
  EXPECT_FALSE(fs::exists(c.dir / "dup.agdb"));
}

TEST(CliEmbed, CorruptImageFailsUnlessSkipped) {
  const Corpus c = make_corpus("embed_bad", 5, 1);
  write(c.images / "img_00004.png", "\x89PNG truncated");
  const std::string out = (c.dir / "partial.agdb").string();
  const Result strict = agsv_cli({"embed", "--ckpt", c.ckpt.string(), "--images", c.manifest.string(), "--out", out});
  EXPECT_EQ(strict.code, 2);
  EXPECT_NE(strict.err.find("img_00004"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));

  const Result lenient =
      agsv_cli({"embed", "--ckpt", c.ckpt.string(), "--images", c.manifest.string(), "--out", out, "--skip-bad"});
  ASSERT_EQ(lenient.code, 0) << lenient.err;
  EXPECT_NE(lenient.err.find("warning"), std::string::npos);
  EXPECT_NE(lenient.err.find("img_00004"), std::string::npos);
  const EmbeddingStore store = EmbeddingStore::load(out);
  EXPECT_EQ(store.size(), 9u);
  EXPECT_FALSE(store.contains("img_00004"));
}

TEST(CliEmbed, MissingCheckpointExitTwo) {
  const fs::path dir = temp_dir("embed_nockpt");
  write(dir / "m.tsv", "a\ta.png\n");
  EXPECT_EQ(agsv_cli({"embed", "--ckpt", (dir / "none.ckpt").string(), "--images", (dir / "m.tsv").string(), "--out",
                      (dir / "s.agdb").string()})
                .code,
            2);
}

// ------------------------------------------------------------------ search

std::vector<std::pair<std::string, double>> parse_hits(const std::string& text) {
  const auto rows = lines(text);
  EXPECT_FALSE(rows.empty());
  EXPECT_EQ(rows[0], "rank\tid\tsimilarity");
  std::vector<std::pair<std::string, double>> hits;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split(rows[i], '\t');
    EXPECT_EQ(cells.size(), 3u);
    EXPECT_EQ(cells[0], std::to_string(i));
    hits.emplace_back(cells[1], std::stod(cells[2]));
  }
  return hits;
}

TEST(CliSearch, MatchesExactSearch) {
  const Corpus c = make_corpus("search", 10, 2);
  const fs::path query = c.images / "img_00007.png";
  const Result r = agsv_cli(
      {"search", "--store", c.store.string(), "--query", query.string(), "--ckpt", c.ckpt.string(), "-k", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto hits = parse_hits(r.out);
  ASSERT_EQ(hits.size(), 5u);
  EXPECT_EQ(hits[0].first, "img_00007");
  EXPECT_NEAR(hits[0].second, 1.0, 1e-6);

  const EncoderCheckpoint ckpt = load_checkpoint(c.ckpt);
  const std::vector<Image> img{read_image(query, 16, 16, 3)};
  const Vector q = encode(ckpt, img).row(0).transpose();
  const auto expected = EmbeddingStore::load(c.store).exact_search(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), 5);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(hits[i].first, expected[i].id);
    EXPECT_NEAR(hits[i].second, expected[i].similarity, 5e-7);
  }
}

TEST(CliSearch, AnnWithWideBeamMatchesExact) {
  const Corpus c = make_corpus("search_ann", 10, 2);
  const std::vector<std::string> base{"search", "--store", c.store.string(), "--query",
                                      (c.images / "img_00002.png").string(), "--ckpt", c.ckpt.string(), "-k", "8"};
  auto ann = base;
  ann.insert(ann.end(), {"--ann", "--beam", "100"});
  const Result exact = agsv_cli(base);
  const Result approx = agsv_cli(ann);
  ASSERT_EQ(approx.code, 0) << approx.err;
  EXPECT_EQ(approx.out, exact.out);
}

TEST(CliSearch, KLargerThanStoreReturnsAll) {
  const Corpus c = make_corpus("search_all", 2, 1);
  const Result r = agsv_cli({"search", "--store", c.store.string(), "--query", (c.images / "img_00000.png").string(),
                             "--ckpt", c.ckpt.string(), "-k", "50"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(parse_hits(r.out).size(), 4u);
}

TEST(CliSearch, Errors) {
  const Corpus c = make_corpus("search_err", 2, 1);
  EmbeddingStore().save(c.dir / "empty.agdb");
  const std::string q = (c.images / "img_00000.png").string();
  EXPECT_EQ(agsv_cli({"search", "--store", (c.dir / "empty.agdb").string(), "--query", q, "--ckpt", c.ckpt.string()})
                .code,
            2);
  EXPECT_EQ(agsv_cli({"search", "--store", c.store.string(), "--query", q, "--ckpt", c.ckpt.string(), "-k", "0"}).code,
            1);
  write(c.dir / "junk.png", "junk");
  EXPECT_EQ(agsv_cli({"search", "--store", c.store.string(), "--query", (c.dir / "junk.png").string(), "--ckpt",
                      c.ckpt.string()})
                .code,
            2);
  write(c.dir / "corrupt.agdb", "AGDB nonsense");
  EXPECT_EQ(agsv_cli({"search", "--store", (c.dir / "corrupt.agdb").string(), "--query", q, "--ckpt", c.ckpt.string()})
                .code,
            2);
}

// ------------------------------------------------------------------ analytics wrappers

TEST(CliOutliers, MatchesAnalytics) {
  const fs::path dir = temp_dir("outliers");
  Matrix points = gaussian_cloud(100, 8, 21);
  for (Eigen::Index i : {7, 47, 91}) points.row(i) = Vector::Unit(8, 3).transpose() * 1.0 + points.row(i) * 0.1;
  const fs::path store = vector_store(dir, points);

  const Result r = agsv_cli({"outliers", "--store", store.string(), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> ids;
  const Matrix stored = stored_points(store, &ids);
  OutlierConfig cfg;
  cfg.seed = 4;
  const OutlierReport expected = detect_outliers(stored, cfg, ids);
  EXPECT_EQ(r.out, outlier_report_jsonl(expected));
  EXPECT_EQ(expected.flagged, (std::vector<std::size_t>{7, 47, 91}));

  const Result minority = agsv_cli({"outliers", "--store", store.string(), "--method", "minority-cluster", "--clusters",
                                    "2", "--minority-fraction", "0.1", "--seed", "4"});
  ASSERT_EQ(minority.code, 0);
  cfg.method = kMinorityCluster;
  cfg.clusters = 2;
  cfg.minority_fraction = 0.1;
  EXPECT_EQ(minority.out, outlier_report_jsonl(detect_outliers(stored, cfg, ids)));

  const Result fixed = agsv_cli({"outliers", "--store", store.string(), "--threshold", "0"});
  ASSERT_EQ(fixed.code, 0);
  const json head = json::parse(lines(fixed.out)[0]);
  EXPECT_EQ(head["threshold"], 0.0);
}

TEST(CliOutliers, FileOutputAndPlot) {
  const fs::path dir = temp_dir("outliers_plot");
  const fs::path store = vector_store(dir, gaussian_cloud(30, 5, 2));
  const Result r = agsv_cli({"outliers", "--store", store.string(), "--out", (dir / "o.jsonl").string(), "--plot",
                             (dir / "o.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "o.jsonl")).size(), 31u);
  const auto bytes = read_file_bytes(dir / "o.png");
  const Raster plot = decode_image(bytes);
  EXPECT_EQ(plot.width, 512);
  EXPECT_EQ(plot.height, 512);
}

TEST(CliOutliers, Errors) {
  const fs::path dir = temp_dir("outliers_err");
  const fs::path small = vector_store(dir, gaussian_cloud(9, 4, 1));
  EXPECT_EQ(agsv_cli({"outliers", "--store", small.string()}).code, 2);
  EXPECT_EQ(agsv_cli({"outliers", "--store", small.string(), "--method", "isolation-forest"}).code, 1);
  EXPECT_EQ(agsv_cli({"outliers", "--store", small.string(), "--sigma", "-1"}).code, 1);
  EXPECT_EQ(agsv_cli({"outliers", "--store", (dir / "absent.agdb").string()}).code, 2);
}

TEST(CliProject, MatchesAnalytics) {
  const fs::path dir = temp_dir("project");
  const fs::path store = vector_store(dir, gaussian_cloud(40, 6, 8, 0.3));
  const Result r = agsv_cli({"project", "--store", store.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> ids;
  std::vector<Metadata> metadata;
  const Matrix stored = stored_points(store, &ids, &metadata);
  EXPECT_EQ(r.out, projection_jsonl(project_3d(stored), ids, metadata));
}

TEST(CliProject, PlotColoredByMetadata) {
  const fs::path dir = temp_dir("project_plot");
  const fs::path store = vector_store(dir, gaussian_cloud(40, 6, 8, 0.3));
  const Result r = agsv_cli({"project", "--store", store.string(), "--out", (dir / "p.jsonl").string(), "--plot",
                             (dir / "p.png").string(), "--color-by", "label"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Raster plot = decode_image(read_file_bytes(dir / "p.png"));
  // Two labels, two palette colors.
  std::set<std::array<int, 3>> colors;
  for (std::size_t i = 0; i < plot.pixels.size(); i += 3) {
    const std::array<int, 3> px{plot.pixels[i], plot.pixels[i + 1], plot.pixels[i + 2]};
    if (px != std::array<int, 3>{255, 255, 255} && px != std::array<int, 3>{200, 200, 200}) colors.insert(px);
  }
  EXPECT_EQ(colors.size(), 2u);
}

TEST(CliProject, TooFewRecordsExitTwo) {
  const fs::path dir = temp_dir("project_err");
  EXPECT_EQ(agsv_cli({"project", "--store", vector_store(dir, gaussian_cloud(3, 4, 1)).string()}).code, 2);
}

Matrix alternating_frames(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(n), 6);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const bool scene = i % 3 == 1;  // minority mode every third frame
    for (Eigen::Index j = 0; j < 6; ++j) m(i, j) = (j == (scene ? 1 : 0) ? 1.0 : 0.0) + 0.05 * rng.normal();
  }
  return m;
}

TEST(CliFrames, MatchesPartitionAndDedup) {
  const fs::path dir = temp_dir("frames");
  const fs::path store = vector_store(dir, alternating_frames(30, 3));
  const Result r = agsv_cli({"frames", "--store", store.string(), "--dedup-threshold", "0.995", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;

  std::vector<std::string> ids;
  const Matrix stored = stored_points(store, &ids);
  const FramePartition part = partition_frames(stored, KeepGroup::kLarger, 2);
  const auto& kept = part.groups[part.kept];
  Matrix kept_frames(static_cast<Eigen::Index>(kept.size()), stored.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) kept_frames.row(i) = stored.row(kept[i]);
  std::set<std::size_t> selected;
  for (std::size_t i : dedup_frames(kept_frames, 0.995)) selected.insert(kept[i]);

  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 32u);
  EXPECT_EQ(rows[0], "id,group,kept,selected");
  for (std::size_t i = 0; i < 30; ++i) {
    const auto cells = split(rows[i + 1], ',');
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_EQ(cells[0], ids[i]);
    EXPECT_EQ(std::stoi(cells[1]), part.labels[i]);
    EXPECT_EQ(cells[2] == "1", part.labels[i] == part.kept);
    EXPECT_EQ(cells[3] == "1", selected.count(i) == 1);
  }
  // The majority mode is kept: frames 0, 2, 3, 5, ...
  EXPECT_EQ(kept.size(), 20u);
  EXPECT_EQ(rows.back().rfind("# groups=20/10,kept=0,", 0), 0u) << rows.back();
}

TEST(CliFrames, KeepSmallerAndErrors) {
  const fs::path dir = temp_dir("frames_keep");
  const fs::path store = vector_store(dir, alternating_frames(12, 5));
  const Result r = agsv_cli({"frames", "--store", store.string(), "--keep", "smaller"});
  ASSERT_EQ(r.code, 0);
  std::size_t kept = 0;
  for (const auto& row : lines(r.out))
    if (row.find(",1,1,1") != std::string::npos) ++kept;
  EXPECT_EQ(kept, 4u);
  EXPECT_EQ(agsv_cli({"frames", "--store", store.string(), "--keep", "middle"}).code, 1);
  EXPECT_EQ(agsv_cli({"frames", "--store", store.string(), "--dedup-threshold", "1.5"}).code, 1);
  EXPECT_EQ(agsv_cli({"frames", "--store", vector_store(temp_dir("frames_one"), alternating_frames(1, 1)).string()}).code,
            2);
}

TEST(CliBalance, ByKeyAndByCluster) {
  const fs::path dir = temp_dir("balance");
  const fs::path store = vector_store(dir, alternating_frames(40, 9));
  const Result by_key = agsv_cli({"balance", "--store", store.string(), "--key", "label"});
  ASSERT_EQ(by_key.code, 0) << by_key.err;
  EXPECT_EQ(by_key.out, "label,count\na,10\nb,30\n# total=40,imbalance_ratio=3.000000\n");

  const Result by_cluster = agsv_cli({"balance", "--store", store.string(), "--clusters", "2", "--seed", "1"});
  ASSERT_EQ(by_cluster.code, 0) << by_cluster.err;
  KMeansConfig cfg;
  cfg.k = 2;
  cfg.seed = 1;
  cfg.restarts = 4;
  const ClusterModel model = kmeans(stored_points(store), cfg);
  const BalanceReport expected = balance_report(std::span<const std::size_t>(model.assignments));
  std::ostringstream want;
  want << "label,count\n";
  for (const auto& [label, count] : expected.counts) want << label << "," << count << "\n";
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%.6f", expected.imbalance_ratio);
  want << "# total=40,imbalance_ratio=" << ratio << "\n";
  EXPECT_EQ(by_cluster.out, want.str());
  // The two modes are the clusters.
  EXPECT_DOUBLE_EQ(expected.imbalance_ratio, 27.0 / 13.0);  // frames 1, 4, ..., 37 form the minority mode
}

TEST(CliBalance, Errors) {
  const fs::path dir = temp_dir("balance_err");
  const fs::path store = vector_store(dir, alternating_frames(8, 1));
  EXPECT_EQ(agsv_cli({"balance", "--store", store.string()}).code, 1);
  EXPECT_EQ(agsv_cli({"balance", "--store", store.string(), "--key", "label", "--clusters", "2"}).code, 1);
  EXPECT_EQ(agsv_cli({"balance", "--store", store.string(), "--key", "camera"}).code, 2);
  EXPECT_EQ(agsv_cli({"balance", "--store", store.string(), "--clusters", "9"}).code, 1);
}

// ------------------------------------------------------------------ finetune

struct FinetuneRow {
  std::string encoder;
  std::size_t train = 0, test = 0;
  double accuracy = 0;
  std::string epochs;
};

std::vector<FinetuneRow> parse_finetune(const std::string& text) {
  const auto rows = lines(text);
  EXPECT_EQ(rows.at(0), "encoder\tfraction\ttrain\ttest\taccuracy\tepochs_to_threshold");
  std::vector<FinetuneRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = split(rows[i], '\t');
    EXPECT_EQ(c.size(), 6u);
    out.push_back({c[0], std::stoul(c[2]), std::stoul(c[3]), std::stod(c[4]), c[5]});
  }
  return out;
}

LabeledEmbeddingSet labeled_set(const Corpus& c, const EncoderCheckpoint& ckpt) {
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& e : read_manifest(c.manifest)) {
    images.push_back(read_image(e.path, 16, 16, 3));
    labels.push_back(e.metadata.at("label") == "smooth" ? 0 : 1);  // sorted label order
  }
  return {encode(ckpt, images), labels, 2};
}

TEST(CliFinetune, FullFractionEqualsHarness) {
  const Corpus c = make_corpus("finetune", 20, 3);
  const Result r = agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                             "--epochs", "60", "--seed", "5", "--report", (c.dir / "run.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_finetune(r.out);
  ASSERT_EQ(rows.size(), 1u);

  FinetuneConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 5;
  cfg.loss_threshold = 0.5;
  const double fractions[] = {1.0};
  const FractionResult expected =
      label_efficiency_experiment(labeled_set(c, load_checkpoint(c.ckpt)), fractions, cfg).front();
  EXPECT_EQ(rows[0].encoder, "ssl");
  EXPECT_EQ(rows[0].train, expected.train_size);
  EXPECT_EQ(rows[0].test, expected.test_size);
  EXPECT_EQ(rows[0].train + rows[0].test, 40u);
  EXPECT_NEAR(rows[0].accuracy, expected.accuracy, 5e-7);
  EXPECT_EQ(rows[0].epochs, expected.report.epochs_to_threshold ? std::to_string(*expected.report.epochs_to_threshold)
                                                                 : "none");
  EXPECT_EQ(slurp(c.dir / "run.csv"), run_report_csv(expected.report));

  // Deterministic given --seed.
  EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                      "--epochs", "60", "--seed", "5"})
                .out,
            r.out);
}

TEST(CliFinetune, WholeNetworkEqualsHarness) {
  const Corpus c = make_corpus("finetune_whole", 10, 2);
  const Result r = agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                             "--epochs", "8", "--seed", "4", "--whole-network", "--encoder-lr", "0.001"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_finetune(r.out);
  ASSERT_EQ(rows.size(), 1u);

  WholeNetworkConfig cfg;
  cfg.head.epochs = 8;
  cfg.head.seed = 4;
  cfg.head.loss_threshold = 0.5;
  cfg.encoder_learning_rate = 1e-3;
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& e : read_manifest(c.manifest)) {
    images.push_back(read_image(e.path, 16, 16, 3));
    labels.push_back(e.metadata.at("label") == "smooth" ? 0 : 1);
  }
  const double fractions[] = {1.0};
  const FractionResult expected =
      whole_network_label_efficiency(load_checkpoint(c.ckpt), images, labels, 2, fractions, cfg).front();
  EXPECT_EQ(rows[0].train, expected.train_size);
  EXPECT_EQ(rows[0].test, expected.test_size);
  EXPECT_NEAR(rows[0].accuracy, expected.accuracy, 5e-7);
  EXPECT_EQ(rows[0].epochs, expected.report.epochs_to_threshold ? std::to_string(*expected.report.epochs_to_threshold)
                                                                 : "none");

  EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                      "--whole-network", "--encoder-lr", "-1"})
                .code,
            1);
  // --encoder-lr only applies to the whole-network mode.
  EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                      "--encoder-lr", "0.001"})
                .code,
            1);
}

TEST(CliFinetune, PretrainedNoWorseThanScratch) {
  const Corpus c = make_corpus("finetune_scratch", 64, 30);
  for (const char* fraction : {"0.1", "1.0"}) {
    const Result r = agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction",
                               fraction, "--seed", "7", "--compare-scratch"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = parse_finetune(r.out);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].encoder, "scratch");
    EXPECT_GE(rows[0].accuracy, rows[1].accuracy) << fraction;
  }
}

TEST(CliFinetune, Errors) {
  const Corpus c = make_corpus("finetune_err", 6, 1);
  for (const char* bad : {"0", "-0.5", "1.5"})
    EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", bad}).code,
              1)
        << bad;
  // 6 per class, 5 left after the test split: 5% rounds to zero samples.
  EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "0.05"}).code,
            2);
  EXPECT_EQ(agsv_cli({"finetune", "--ckpt", c.ckpt.string(), "--data", c.manifest.string(), "--fraction", "1",
                      "--label-key", "species"})
                .code,
            2);
}

// ------------------------------------------------------------------ serve

struct ServeRun {
  std::thread thread;
  Result result;
  int port = 0;
};

std::unique_ptr<ServeRun> start_serve(const fs::path& config, const fs::path& port_file) {
  fs::remove(port_file);
  auto run = std::make_unique<ServeRun>();
  ServeRun* raw = run.get();
  run->thread = std::thread([raw, config, port_file] {
    raw->result = agsv_cli({"serve", "--config", config.string(), "--port-file", port_file.string()});
  });
  for (int i = 0; i < 500 && !fs::exists(port_file); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  if (fs::exists(port_file)) run->port = std::stoi(slurp(port_file));
  return run;
}

int stop_serve(ServeRun& run) {
  cli::request_shutdown();
  run.thread.join();
  return run.result.code;
}

TEST(CliServe, StatsIngestAndRestart) {
  const Corpus c = make_corpus("serve", 2, 1);
  write(c.dir / "service.json", json{{"host", "127.0.0.1"},
                                     {"port", 0},
                                     {"checkpoint_path", "model.ckpt"},
                                     {"store_path", "served.agdb"}}
                                    .dump());
  auto first = start_serve(c.dir / "service.json", c.dir / "port");
  ASSERT_GT(first->port, 0);
  {
    httplib::Client client("127.0.0.1", first->port);
    const auto stats = client.Get("/v1/stats");
    ASSERT_TRUE(stats);
    EXPECT_EQ(stats->status, 200);
    EXPECT_EQ(json::parse(stats->body)["count"], 0);
    const httplib::MultipartFormDataItems form{
        {"image", slurp(c.images / "img_00001.png"), "a.png", "image/png"}, {"id", "frame-1", "", ""}};
    const auto ingest = client.Post("/v1/ingest", form);
    ASSERT_TRUE(ingest);
    EXPECT_EQ(ingest->status, 200) << ingest->body;
  }
  ASSERT_EQ(stop_serve(*first), 0) << first->result.err;
  EXPECT_NE(first->result.out.find("1 records saved"), std::string::npos) << first->result.out;
  EXPECT_TRUE(EmbeddingStore::load(c.dir / "served.agdb").contains("frame-1"));

  auto second = start_serve(c.dir / "service.json", c.dir / "port");
  ASSERT_GT(second->port, 0);
  {
    httplib::Client client("127.0.0.1", second->port);
    const auto stats = client.Get("/v1/stats");
    ASSERT_TRUE(stats);
    EXPECT_EQ(json::parse(stats->body)["count"], 1);
  }
  EXPECT_EQ(stop_serve(*second), 0);
}

TEST(CliServe, InterruptPersistsStore) {
  const Corpus c = make_corpus("serve_sigint", 2, 1);
  write(c.dir / "service.json",
        json{{"port", 0}, {"checkpoint_path", "model.ckpt"}, {"store_path", "served.agdb"}}.dump());
  const fs::path port_file = c.dir / "port";
  const std::string binary = AGSV_BINARY;
  const std::string config = (c.dir / "service.json").string();
  const std::string port_arg = port_file.string();
  std::vector<char*> argv{const_cast<char*>(binary.c_str()), const_cast<char*>("serve"),
                          const_cast<char*>("--config"), const_cast<char*>(config.c_str()),
                          const_cast<char*>("--port-file"), const_cast<char*>(port_arg.c_str()), nullptr};
  pid_t pid = 0;
  ASSERT_EQ(posix_spawn(&pid, binary.c_str(), nullptr, nullptr, argv.data(), environ), 0);
  for (int i = 0; i < 500 && !fs::exists(port_file); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ASSERT_TRUE(fs::exists(port_file));
  {
    httplib::Client client("127.0.0.1", std::stoi(slurp(port_file)));
    const httplib::MultipartFormDataItems form{{"image", slurp(c.images / "img_00002.png"), "b.png", "image/png"}};
    const auto ingest = client.Post("/v1/ingest", form);
    ASSERT_TRUE(ingest);
    EXPECT_EQ(ingest->status, 200);
  }
  ASSERT_EQ(::kill(pid, SIGINT), 0);
  int status = 0;
  ASSERT_EQ(::waitpid(pid, &status, 0), pid);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(EmbeddingStore::load(c.dir / "served.agdb").size(), 1u);
}

TEST(CliServe, BusyPortExitThree) {
  const Corpus c = make_corpus("serve_busy", 2, 1);
  ServiceConfig holder_cfg;
  holder_cfg.port = 0;
  holder_cfg.checkpoint_path = c.ckpt;
  auto holder = Service::open(holder_cfg);
  HttpServer blocker(*holder);
  const int port = blocker.bind();

  write(c.dir / "service.json",
        json{{"port", port}, {"checkpoint_path", c.ckpt.string()}, {"store_path", "x.agdb"}}.dump());
  const Result r = agsv_cli({"serve", "--config", (c.dir / "service.json").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find(std::to_string(port)), std::string::npos);
}

TEST(CliServe, ConfigErrors) {
  const fs::path dir = temp_dir("serve_cfg");
  write(dir / "unknown.json", R"({"port": 0, "checkpoint_path": "m.ckpt", "colour": "blue"})");
  EXPECT_EQ(agsv_cli({"serve", "--config", (dir / "unknown.json").string()}).code, 1);
  write(dir / "nockpt.json", R"({"port": 0, "checkpoint_path": "missing.ckpt"})");
  EXPECT_EQ(agsv_cli({"serve", "--config", (dir / "nockpt.json").string()}).code, 2);
}

// ------------------------------------------------------------------ plot

TEST(ScatterPlot, PlacesExtremesAtTheMargins) {
  const std::vector<double> x{0.0, 10.0, 5.0};
  const std::vector<double> y{0.0, 4.0, 2.0};
  const std::vector<int> g{0, 1, 9};
  const Raster r = cli::scatter_plot(x, y, g, 64);
  ASSERT_EQ(r.width, 64);
  ASSERT_EQ(r.height, 64);
  ASSERT_EQ(r.channels, 3);
  auto px = [&](int col, int row) {
    const std::size_t at = (static_cast<std::size_t>(row) * 64 + col) * 3;
    return std::array<int, 3>{r.pixels[at], r.pixels[at + 1], r.pixels[at + 2]};
  };
  const std::array<int, 3> white{255, 255, 255};
  const int m = 64 / 16;
  const int span = 63 - 2 * m;
  // (min, min) lower-left, (max, max) upper-right, the midpoint in between.
  const auto lower_left = px(m, 63 - m);
  const auto upper_right = px(63 - m, m);
  const auto middle = px(m + (span + 1) / 2, 63 - m - (span + 1) / 2);
  EXPECT_NE(lower_left, white);
  EXPECT_NE(upper_right, white);
  EXPECT_NE(lower_left, upper_right);
  // Eight colors, then the palette repeats.
  EXPECT_EQ(middle, upper_right);
  EXPECT_EQ(px(20, 1), white);
}

TEST(ScatterPlot, Errors) {
  const std::vector<double> a{1, 2};
  const std::vector<double> b{1};
  EXPECT_THROW(cli::scatter_plot(a, b, {}, 64), ShapeError);
  EXPECT_THROW(cli::scatter_plot(a, a, {}, 16), InputError);
  const std::vector<double> nan{1, std::nan("")};
  EXPECT_THROW(cli::scatter_plot(a, nan, {}, 64), DataError);
  const Raster blank = cli::scatter_plot({}, {}, {}, 64);
  EXPECT_EQ(blank.pixels.size(), 64u * 64 * 3);
}

}  // namespace
}  // namespace agsv
