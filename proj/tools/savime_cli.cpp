// Command-line client and server launcher. Statements run either embedded
// (in-process engine over a local storage directory) or against a server via
// the frame protocol.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "savime/bench.hpp"
#include "savime/server.hpp"

using namespace savime;

namespace {

struct GlobalOpts {
  std::string host = "127.0.0.1";
  int port = 4711;
  bool embedded = false;
  std::string config_path;
  std::string storage_dir;
  std::string log_level;
};

Config make_config(const GlobalOpts& g) {
  Config cfg = load_config(g.config_path);
  if (!g.storage_dir.empty()) cfg.storage_dir = g.storage_dir;
  if (!g.log_level.empty()) cfg.log_level = g.log_level;
  return cfg;
}

StorageConfig bench_storage(const Config& cfg) {
  StorageConfig scfg;
  scfg.storage_dir = cfg.storage_dir + "/bench";
  scfg.temp_dir = cfg.effective_temp_dir() + "/bench";
  scfg.max_resident_bytes = cfg.max_resident_bytes;
  return scfg;
}

// Prints a result as an aligned table: dimensions first, then attributes.
void print_table(const TarDefPtr& schema, const std::vector<SubTarPtr>& subtars,
                 size_t max_rows) {
  auto dims = schema->dimensions();
  auto atts = schema->attributes();
  std::vector<std::string> headers;
  for (const auto* d : dims) headers.push_back(d->name);
  for (const auto* a : atts) headers.push_back(a->name);
  std::vector<std::vector<std::string>> rows;
  size_t total = 0;
  for (const auto& sub : subtars) {
    enumerate_cells(*sub, nullptr, nullptr,
                    [&](std::span<const int64_t>, size_t offset) {
                      if (max_rows && rows.size() >= max_rows) return;
                      std::vector<std::string> row;
                      for (const auto* d : dims)
                        row.push_back(value_at(*sub, offset, d->name).to_string());
                      for (const auto* a : atts)
                        row.push_back(sub->att_value(a->name, offset).to_string());
                      rows.push_back(std::move(row));
                    });
    total += sub->length;
  }
  std::vector<size_t> width(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
  for (const auto& row : rows)
    for (size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  auto print_row = [&](const std::vector<std::string>& row) {
    for (size_t c = 0; c < row.size(); ++c) {
      std::cout << (c ? "  " : "");
      std::cout.width(static_cast<std::streamsize>(width[c]));
      std::cout << row[c];
    }
    std::cout << "\n";
  };
  print_row(headers);
  for (const auto& row : rows) print_row(row);
  if (max_rows && total > rows.size())
    std::cout << "... (" << total << " cells total, output truncated)\n";
}

// Dumps a result as raw files: schema.json, a subtars.json manifest, and one
// little-endian binary file per dataset.
void dump_raw(const TarDefPtr& schema, const std::vector<SubTarPtr>& subtars,
              const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/schema.json");
    f << wire_tardef_to_json(*schema).dump(2) << "\n";
  }
  json manifest = json::array();
  for (size_t i = 0; i < subtars.size(); ++i) {
    const SubTar& sub = *subtars[i];
    json js;
    js["length"] = sub.length;
    js["dims"] = json::array();
    auto write_bytes = [&](const std::string& file, const Dataset& ds) {
      std::ofstream f(dir + "/" + file, std::ios::binary);
      auto b = ds.bytes();
      f.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(b.size()));
    };
    for (const auto& spec : sub.dim_specs) {
      json jd = {{"dimension", spec.dimension},
                 {"kind", spec_kind_name(spec.kind)},
                 {"lower", spec.lower},
                 {"upper", spec.upper}};
      if (spec.data) {
        std::string file =
            "s" + std::to_string(i) + "_dim_" + spec.dimension + ".bin";
        write_bytes(file, *spec.data);
        jd["file"] = file;
        jd["type"] = elem_name(spec.data->type());
      }
      js["dims"].push_back(std::move(jd));
    }
    js["atts"] = json::object();
    for (const auto& [name, ds] : sub.atts) {
      std::string file = "s" + std::to_string(i) + "_att_" + name + ".bin";
      write_bytes(file, *ds);
      js["atts"][name] = {{"file", file},
                          {"type", elem_name(ds->type())},
                          {"length", ds->length()}};
    }
    manifest.push_back(std::move(js));
  }
  std::ofstream f(dir + "/subtars.json");
  f << manifest.dump(2) << "\n";
}

int run_statement(const GlobalOpts& g, const std::string& text,
                  size_t max_rows, const std::string& raw_dir) {
  TarDefPtr schema;
  std::vector<SubTarPtr> subtars;
  std::string message;
  std::optional<Database> db;  // keeps temp datasets alive while printing
  if (g.embedded) {
    db.emplace(make_config(g));
    StatementResult r = db->execute(text);
    if (!r.is_query) {
      std::cout << r.message << "\n";
      return 0;
    }
    schema = r.result->schema;
    subtars = std::move(r.result->subtars);
  } else {
    Client client(g.host, g.port);
    auto r = client.execute(text);
    if (!r.message.empty()) {
      std::cout << r.message << "\n";
      return 0;
    }
    schema = r.schema;
    subtars = std::move(r.subtars);
  }
  if (!raw_dir.empty())
    dump_raw(schema, subtars, raw_dir);
  else
    print_table(schema, subtars, max_rows);
  return 0;
}

Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"savime: an embedded array engine for simulation data"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--host", g.host, "server host");
  app.add_option("--port", g.port, "server port");
  app.add_flag("--embedded", g.embedded, "run in-process instead of connecting");
  app.add_option("--config", g.config_path, "configuration file path");
  app.add_option("--storage-dir", g.storage_dir, "override storage directory");
  app.add_option("--log-level", g.log_level, "debug|info|warn|error");

  std::string query_text, raw_dir;
  size_t max_rows = 0;
  auto* q = app.add_subcommand("query", "run one statement and print the result");
  q->add_option("text", query_text, "statement text")->required();
  q->add_option("--max-rows", max_rows, "truncate table output");
  q->add_option("--raw", raw_dir, "dump result datasets into a directory");

  std::string ds_name, ds_file, ds_type;
  bool ds_move = false;
  auto* ld = app.add_subcommand("load-dataset",
                                "register a raw binary file as a dataset");
  ld->add_option("name", ds_name)->required();
  ld->add_option("file", ds_file)->required();
  ld->add_option("type", ds_type, "int32|int64|float32|float64")->required();
  ld->add_flag("--move", ds_move, "move the file instead of copying");

  std::string script_path;
  auto* ex = app.add_subcommand("exec", "run statements from a script file");
  ex->add_option("script", script_path)->required();

  std::vector<std::string> vtk_args;
  double sel_time = 0, sel_trial = 0;
  auto* vtk = app.add_subcommand("export-vtk",
                                 "write stored mesh TARs as a legacy VTK file");
  vtk->add_option("tars", vtk_args, "geometry topology field... output-path")
      ->required()
      ->expected(-4);
  auto* topt = vtk->add_option("--time", sel_time, "time selector");
  auto* tropt = vtk->add_option("--trial", sel_trial, "trial selector");

  auto* bench = app.add_subcommand("bench", "benchmark harness");
  bench->require_subcommand(1);
  WorkloadSpec wspec;
  uint64_t bench_seed = 7;
  std::string density = "dense", csv_path, sel_word;
  auto* bw = bench->add_subcommand("window", "window query workload");
  bw->add_option("--tiles", wspec.tiles);
  bw->add_option("--tile-x", wspec.tile_x);
  bw->add_option("--tile-y", wspec.tile_y);
  bw->add_option("--density", density, "dense|sparse");
  bw->add_option("--fill", wspec.fill, "sparse occupancy fraction");
  bw->add_option("--selectivity", sel_word,
                 "fraction of each touched tile, or low|high");
  bw->add_option("--touched", wspec.touched_tiles);
  bw->add_option("--reps", wspec.repetitions);
  bw->add_option("--seed", bench_seed);
  bw->add_option("--csv", csv_path, "write the report as CSV");

  size_t ingest_elements = 10000000;
  std::string ingest_type = "float64";
  uint64_t ingest_seed = 1;
  auto* bi = bench->add_subcommand("ingest", "zero-conversion ingestion check");
  bi->add_option("--elements", ingest_elements);
  bi->add_option("--type", ingest_type);
  bi->add_option("--seed", ingest_seed);

  auto* sv = app.add_subcommand("serve", "run the server");

  CLI11_PARSE(app, argc, argv);

  try {
    if (q->parsed()) return run_statement(g, query_text, max_rows, raw_dir);

    if (ld->parsed()) {
      ElemType type;
      if (!parse_elem_type(ds_type, type))
        throw Error(ErrorCode::BadValue, "unknown element type " + ds_type);
      if (g.embedded) {
        Database db(make_config(g));
        auto ds = db.load_dataset(ds_name, ds_file, type,
                                  ds_move ? AdoptMode::Move : AdoptMode::Copy);
        std::cout << "dataset " << ds->name() << " registered (" << ds->length()
                  << " cells)\n";
      } else {
        std::string bytes;
        {
          std::ifstream f(ds_file, std::ios::binary);
          if (!f) throw Error(ErrorCode::Unreadable, ds_file);
          bytes.assign(std::istreambuf_iterator<char>(f),
                       std::istreambuf_iterator<char>());
        }
        Client client(g.host, g.port);
        client.push_dataset(
            ds_name, type,
            std::span<const std::byte>(
                reinterpret_cast<const std::byte*>(bytes.data()), bytes.size()));
        std::cout << "dataset " << ds_name << " pushed\n";
      }
      return 0;
    }

    if (ex->parsed()) {
      std::ifstream f(script_path);
      if (!f) throw Error(ErrorCode::Unreadable, script_path);
      std::optional<Database> db;
      std::optional<Client> client;
      if (g.embedded)
        db.emplace(make_config(g));
      else
        client.emplace(g.host, g.port);
      std::string line;
      int lineno = 0;
      while (std::getline(f, line)) {
        ++lineno;
        std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        try {
          if (db) {
            auto r = db->execute(text);
            std::cout << (r.is_query ? std::to_string(r.result->total_cells()) +
                                           " cells"
                                     : r.message)
                      << "\n";
          } else {
            auto r = client->execute(text);
            std::cout << (r.message.empty() ? std::to_string(r.subtars.size()) +
                                                  " subtars"
                                            : r.message)
                      << "\n";
          }
        } catch (const std::exception& e) {
          std::cerr << script_path << ":" << lineno << ": " << e.what() << "\n";
          return 1;
        }
      }
      return 0;
    }

    if (vtk->parsed()) {
      if (vtk_args.size() < 4)
        throw Error(ErrorCode::ArityError,
                    "export-vtk needs geometry topology field... output");
      std::string out_path = vtk_args.back();
      std::string geometry = vtk_args[0], topology = vtk_args[1];
      std::vector<std::string> fields(vtk_args.begin() + 2, vtk_args.end() - 1);
      bool has_time = topt->count() > 0;
      bool has_trial = tropt->count() > 0;
      if (g.embedded) {
        Database db(make_config(g));
        auto snap = db.snapshot();
        MeshBundle bundle;
        bundle.geometry = materialize_stored(*snap, geometry);
        bundle.topology = materialize_stored(*snap, topology);
        for (const auto& fname : fields)
          bundle.fields.push_back(materialize_stored(*snap, fname));
        if (has_time) bundle.time_selector = Scalar(sel_time);
        if (has_trial) bundle.trial_selector = Scalar(sel_trial);
        VtkSummary s =
            export_vtk(*snap, bundle, out_path, db.config().post_export_hook);
        std::cout << "wrote " << out_path << ": " << s.points << " points, "
                  << s.cells << " cells, " << s.fields << " fields\n";
      } else {
        std::string text = "catalyze(" + geometry + ", " + topology;
        for (const auto& fname : fields) text += ", " + fname;
        text += ", \"" + out_path + "\"";
        if (has_time) text += ", " + std::to_string(sel_time);
        if (has_trial) text += ", " + std::to_string(sel_trial);
        text += ")";
        Client client(g.host, g.port);
        auto r = client.execute(text);
        if (!r.subtars.empty())
          std::cout << "wrote " << out_path << ": "
                    << value_at(*r.subtars[0], 0, "points").to_string()
                    << " points, "
                    << value_at(*r.subtars[0], 0, "cells").to_string()
                    << " cells\n";
      }
      return 0;
    }

    if (bw->parsed()) {
      if (sel_word == "low") wspec.selectivity = 0.7;
      else if (sel_word == "high") wspec.selectivity = 0.2;
      else if (!sel_word.empty()) wspec.selectivity = std::stod(sel_word);
      wspec.dense = density != "sparse";
      Config cfg = make_config(g);
      DatasetStore store(bench_storage(cfg));
      SuiteReport report = run_suite(wspec, bench_seed, store, cfg.threads);
      std::cout << report.csv();
      size_t i = 0;
      for (const auto& row : report.rows) {
        std::cout << "# window " << i++ << ": touched " << row.tiles_touched
                  << " subtars, visited " << row.cells_visited
                  << " cells, median " << row.wall_ms << " ms (min "
                  << row.wall_ms_min << "), oracle "
                  << (row.oracle_ok ? "ok" : "MISMATCH") << "\n";
      }
      if (!csv_path.empty()) {
        std::ofstream f(csv_path, std::ios::trunc);
        f << report.csv();
        std::cout << "# csv written to " << csv_path << "\n";
      }
      return 0;
    }

    if (bi->parsed()) {
      ElemType type;
      if (!parse_elem_type(ingest_type, type))
        throw Error(ErrorCode::BadValue, "unknown element type " + ingest_type);
      Config cfg = make_config(g);
      DatasetStore store(bench_storage(cfg));
      IngestReport rep = ingest_bench(store, ingest_elements, type, ingest_seed);
      std::cout << "elements:        " << rep.elements << "\n"
                << "raw copy:        " << rep.copy_ms << " ms\n"
                << "ingest (adopt):  " << rep.ingest_ms << " ms\n"
                << "ratio:           " << rep.ratio << "\n"
                << "element touches: " << rep.element_touches << "\n";
      return rep.element_touches == 0 ? 0 : 1;
    }

    if (sv->parsed()) {
      Config cfg = make_config(g);
      Database db(cfg);
      Server server(db, cfg.host, cfg.port);
      server.start();
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      server.wait();
      server.stop();
      g_server = nullptr;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
