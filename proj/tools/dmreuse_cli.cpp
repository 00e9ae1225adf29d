// dmreuse: command-line front end. Every subcommand runs against a local data
// directory (or the in-memory default) through the same functions the HTTP
// server uses; --json prints exactly the objects the API returns.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"

#include "dmreuse/binary_io.hpp"
#include "dmreuse/codec.hpp"
#include "dmreuse/error.hpp"
#include "dmreuse/http_server.hpp"
#include "dmreuse/service.hpp"
#include "dmreuse/synthetic.hpp"

namespace fs = std::filesystem;
using namespace dmreuse;

namespace {

struct Globals {
  std::string config_path;
  std::string data_dir;
  bool json = false;
};

ServiceConfig make_config(const Globals& g) {
  auto cfg = load_config(g.config_path);
  apply_env_overrides(cfg);
  if (!g.data_dir.empty()) cfg.data_dir = g.data_dir;
  return cfg;
}

Json read_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path + ": " + e.what());
  }
}

void print(const Globals& g, const Json& j, const std::function<void()>& human) {
  if (g.json) {
    std::cout << j.dump() << '\n';
  } else {
    human();
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Query body from either a JSON request file or an external embedding
// manifest; command-line options override fields of the file.
Json query_body(const std::string& request, const std::string& manifest, const std::string& ops,
                std::optional<std::size_t> n, std::optional<std::uint64_t> seed,
                const std::string& dataset_id) {
  Json body;
  if (!request.empty()) {
    body = read_json(request);
  } else if (!manifest.empty()) {
    body["embeddings"] = Json::array();
    for (const auto& e : ingest_external_embeddings(manifest)) {
      body["embeddings"].push_back({{"id", e.id}, {"source", e.source}, {"vector", e.vector.values}});
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "pass --request or --embeddings");
  }
  if (!ops.empty()) body["ops"] = split_csv(ops);
  if (n) body["n"] = *n;
  if (seed) body["seed"] = *seed;
  if (!dataset_id.empty()) body["dataset_id"] = dataset_id;
  return body;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data and model reuse service"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON config file");
  app.add_option("-d,--data-dir", g.data_dir, "Data directory (overrides config)");
  app.add_flag("--json", g.json, "Print API-identical JSON");

  auto* serve = app.add_subcommand("serve", "Run the HTTP server");
  std::string host;
  int port = -1;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* ingest = app.add_subcommand("ingest", "Add labeled records");
  std::string records_file, emb_manifest, labels_file;
  ingest->add_option("--records", records_file, "JSON file {\"records\": [...]}");
  ingest->add_option("--embeddings", emb_manifest, "External embedding manifest");
  ingest->add_option("--labels", labels_file, "JSON object id -> {schema, data_hex}");

  auto* query = app.add_subcommand("query", "Run a dataset query");
  std::string request_file, query_manifest, ops, dataset_id;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  query->add_option("--request", request_file, "JSON query body");
  query->add_option("--embeddings", query_manifest, "External embedding manifest");
  query->add_option("--ops", ops, "Comma list of lookup,recommend,certainty,pseudo_label");
  query->add_option("-n", n, "Lookup count");
  query->add_option("--seed", seed);
  query->add_option("--dataset-id", dataset_id);
  auto* recommend = app.add_subcommand("recommend", "Recommend a model for a dataset");
  recommend->add_option("--request", request_file);
  recommend->add_option("--embeddings", query_manifest);
  recommend->add_option("--dataset-id", dataset_id);

  auto* reg = app.add_subcommand("register-model", "Register a trained model");
  std::string model_id, artifact_path, artifact_uri, refs_file, dist_file;
  std::vector<std::string> meta;
  reg->add_option("--id", model_id)->required();
  reg->add_option("--artifact", artifact_path, "Artifact file to store");
  reg->add_option("--uri", artifact_uri, "External artifact URI");
  reg->add_option("--refs", refs_file, "Training sample ids, one per line");
  reg->add_option("--distribution", dist_file, "Training distribution JSON");
  reg->add_option("--meta", meta, "key=value metadata");

  auto* update = app.add_subcommand("update", "Run a system update now");
  auto* status = app.add_subcommand("status", "Show generation and counts");

  auto* exp = app.add_subcommand("export", "Export stored embeddings");
  std::string out_path = "embeddings.json";
  exp->add_option("-o,--out", out_path, "Manifest path; vectors go next to it as .bin");

  auto* bench = app.add_subcommand("bench-lookup", "Lookup latency on a synthetic store");
  std::size_t bench_n = 1000, iters = 50, records = 100000, dim = 32, k = 15;
  bench->add_option("--n", bench_n);
  bench->add_option("--iters", iters);
  bench->add_option("--records", records);
  bench->add_option("--dim", dim);
  bench->add_option("--k", k);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench) {
      DataStore store;
      SyntheticStoreSpec spec;
      spec.records = records;
      spec.dim = dim;
      spec.k = k;
      fill_synthetic_store(store, spec);
      const auto snap = store.snapshot();
      std::mt19937_64 rng(7);
      std::vector<double> ms;
      for (std::size_t i = 0; i < iters; ++i) {
        DatasetDistribution pdf;
        pdf.k = k;
        pdf.cluster_model_version = snap->version();
        std::vector<double> w(k);
        double total = 0.0;
        for (auto& x : w) total += (x = std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        for (auto& x : w) x /= total;
        pdf.probs = w;
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = snap->lookup_by_distribution(pdf, bench_n, i);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (res.records.size() != bench_n) throw Error(ErrorCode::InsufficientData, "short lookup");
      }
      Json j = {{"records", records}, {"dim", dim},    {"k", k}, {"n", bench_n}, {"iters", iters},
                {"p50_ms", percentile(ms, 0.5)},        {"p90_ms", percentile(ms, 0.9)},
                {"p99_ms", percentile(ms, 0.99)},
                {"max_ms", *std::max_element(ms.begin(), ms.end())}};
      print(g, j, [&] {
        std::printf("lookup n=%zu over %zu records (D=%zu, K=%zu), %zu iters\n", bench_n, records,
                    dim, k, iters);
        std::printf("  p50 %.3f ms  p90 %.3f ms  p99 %.3f ms  max %.3f ms\n", j["p50_ms"].get<double>(),
                    j["p90_ms"].get<double>(), j["p99_ms"].get<double>(), j["max_ms"].get<double>());
      });
      return 0;
    }

    auto cfg = make_config(g);
    if (*serve) {
      if (!host.empty()) cfg.listen_host = host;
      if (port >= 0) cfg.port = port;
      Service svc(cfg);
      HttpServer server(svc);
      std::cerr << "listening on " << cfg.listen_host << ':' << cfg.port << '\n';
      if (!server.listen(cfg.listen_host, cfg.port)) {
        throw Error(ErrorCode::StorageFailure, "cannot bind " + cfg.listen_host + ":" +
                                                   std::to_string(cfg.port));
      }
      return 0;
    }

    // One-shot commands do not start background updates.
    cfg.auto_update = false;
    Service svc(cfg);

    if (*ingest) {
      Json out;
      if (!records_file.empty()) {
        out = api_ingest(svc, read_json(records_file));
      } else if (!emb_manifest.empty()) {
        if (labels_file.empty()) throw Error(ErrorCode::InvalidArgument, "--labels is required");
        const auto labels = read_json(labels_file);
        Json body = {{"records", Json::array()}};
        for (const auto& e : ingest_external_embeddings(emb_manifest)) {
          if (!labels.contains(e.id)) {
            throw Error(ErrorCode::InvalidArgument, "no label for sample '" + e.id + "'");
          }
          body["records"].push_back({{"sample_id", e.id},
                                     {"source", e.source},
                                     {"embedding", e.vector.values},
                                     {"label", labels[e.id]}});
        }
        out = api_ingest(svc, body);
      } else {
        throw Error(ErrorCode::InvalidArgument, "pass --records or --embeddings");
      }
      print(g, out, [&] {
        std::printf("inserted %zu records; store holds %zu\n", out["inserted"].get<std::size_t>(),
                    out["stats"]["record_count"].get<std::size_t>());
      });
    } else if (*query || *recommend) {
      auto body = query_body(request_file, query_manifest, *recommend ? "recommend" : ops, n, seed,
                             dataset_id);
      const auto out = api_query(svc, body);
      print(g, *recommend ? out["recommendation"] : out, [&] {
        std::printf("generation %llu, pdf over %zu clusters\n",
                    static_cast<unsigned long long>(out["generation"].get<std::uint64_t>()),
                    out["pdf"]["k"].get<std::size_t>());
        if (out.contains("lookup")) {
          std::printf("%zu labeled records\n", out["lookup"]["records"].size());
          for (const auto& r : out["lookup"]["records"]) {
            std::printf("  %s cluster %lld\n", r["sample_id"].get<std::string>().c_str(),
                        static_cast<long long>(r["cluster_id"].get<std::int64_t>()));
          }
        }
        if (out.contains("recommendation")) {
          const auto& rec = out["recommendation"];
          std::printf("recommendation: %s", rec["decision"].get<std::string>().c_str());
          if (!rec["chosen"].is_null()) std::printf(" from %s", rec["chosen"].get<std::string>().c_str());
          std::printf("\n");
          for (const auto& m : rec["ranked"]) {
            std::printf("  %-24s jsd %.6f\n", m["model_id"].get<std::string>().c_str(),
                        m["jsd"].get<double>());
          }
        }
        if (out.contains("certainty")) {
          std::printf("certainty %.2f%%\n", out["certainty"]["certainty"].get<double>());
        }
      });
    } else if (*reg) {
      Json body = {{"model_id", model_id}};
      if (!artifact_path.empty()) body["artifact_hex"] = to_hex(read_file(artifact_path));
      if (!artifact_uri.empty()) body["artifact_uri"] = artifact_uri;
      if (!dist_file.empty()) body["train_distribution"] = read_json(dist_file);
      if (!refs_file.empty()) {
        std::ifstream in(refs_file);
        std::vector<std::string> refs;
        for (std::string line; std::getline(in, line);) {
          if (!line.empty()) refs.push_back(line);
        }
        body["training_refs"] = refs;
      }
      Json md = Json::object();
      for (const auto& kv : meta) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--meta needs key=value");
        md[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      body["metadata"] = md;
      const auto out = api_register_model(svc, body);
      print(g, out, [&] {
        std::printf("registered %s (%s)\n", out["model_id"].get<std::string>().c_str(),
                    out["content_hash"].get<std::string>().c_str());
      });
    } else if (*update) {
      const auto out = api_update(svc);
      print(g, out, [&] {
        std::printf("generation %llu: K=%zu, %zu records reindexed (%zu moved), %zu zoo entries "
                    "refreshed, %zu stale, %.1f ms\n",
                    static_cast<unsigned long long>(out["generation"].get<std::uint64_t>()),
                    out["chosen_k"].get<std::size_t>(), out["records_reindexed"].get<std::size_t>(),
                    out["records_changed_cluster"].get<std::size_t>(),
                    out["zoo_refreshed"].get<std::size_t>(), out["zoo_stale"].size(),
                    out["elapsed_ms"].get<double>());
      });
    } else if (*status) {
      const auto out = api_status(svc);
      print(g, out, [&] {
        std::printf("generation %llu\nrecords %zu (unassigned %zu)\nmodels %zu (stale %zu)\n",
                    static_cast<unsigned long long>(out["generation"].get<std::uint64_t>()),
                    out["store"]["record_count"].get<std::size_t>(),
                    out["store"]["unassigned"].get<std::size_t>(),
                    out["zoo"]["models"].get<std::size_t>(), out["zoo"]["stale"].get<std::size_t>());
      });
    } else if (*exp) {
      auto [manifest, vectors] = svc.export_embeddings();
      const auto bin = fs::path(out_path).replace_extension(".bin");
      auto mj = Json::parse(manifest);
      mj["vector_file"] = bin.filename().string();
      write_file_atomic(bin.string(), vectors);
      write_file_atomic(out_path, mj.dump(2));
      Json out = {{"manifest", out_path}, {"vector_file", bin.string()}, {"count", mj["count"]}};
      print(g, out, [&] {
        std::printf("wrote %zu embeddings to %s\n", mj["count"].get<std::size_t>(), bin.c_str());
      });
    }
  } catch (const Error& e) {
    if (g.json) {
      std::cout << Json{{"error", error_json(e)}}.dump() << '\n';
    } else {
      std::cerr << "error: " << e.what() << '\n';
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
