#pragma once

#include <chrono>
#include <fstream>
#include <random>

#include "savime/engine.hpp"

namespace savime {

// Deterministic 64-bit mix; the workload generator never depends on
// library-specific distributions so equal seeds give identical bytes.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double unit_double(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

struct WorkloadSpec {
  size_t tiles = 500;
  size_t tile_x = 100;  // cells per tile along x
  size_t tile_y = 100;  // cells per tile along y
  bool dense = true;
  double fill = 0.3;          // sparse tiles: expected occupancy fraction
  double selectivity = 1.0;   // fraction of each touched tile the window covers
  size_t touched_tiles = 1;
  size_t repetitions = 5;

  void validate() const {
    if (tiles == 0 || tile_x == 0 || tile_y == 0 || repetitions == 0)
      throw Error(ErrorCode::BadValue, "workload parameters must be positive");
    if (selectivity <= 0 || selectivity > 1)
      throw Error(ErrorCode::BadValue, "selectivity must be in (0, 1]");
    if (!dense && (fill <= 0 || fill > 1))
      throw Error(ErrorCode::BadValue, "fill must be in (0, 1]");
    if (touched_tiles == 0 || touched_tiles > tiles)
      throw Error(ErrorCode::BadValue, "touched_tiles must be in [1, tiles]");
  }
};

// Tiles are laid out in a single row along x, so a window can touch any tile
// count while covering the same fraction of every touched tile.
struct Window {
  int64_t x0, x1, y0, y1;

  std::string query(const std::string& tar) const {
    return "subset(" + tar + ", x, " + std::to_string(x0) + ", " +
           std::to_string(x1) + ", y, " + std::to_string(y0) + ", " +
           std::to_string(y1) + ")";
  }
};

struct Workload {
  TarSchema schema;
  std::string tar_name = "bench_data";
  WorkloadSpec spec;
  std::vector<Window> windows;

  // brute-force oracle state: x-major dense map of the whole TAR
  std::vector<double> values;
  std::vector<uint8_t> occupied;

  int64_t width() const { return int64_t(spec.tiles) * int64_t(spec.tile_x); }
  int64_t height() const { return int64_t(spec.tile_y); }
  size_t cell_index(int64_t x, int64_t y) const {
    return static_cast<size_t>(x) * static_cast<size_t>(height()) +
           static_cast<size_t>(y);
  }
};

// Builds the chunked TAR (one subTAR per tile; Ordered specs when dense,
// Total specs when sparse) plus the window list. Deterministic per seed.
inline Workload generate_workload(const WorkloadSpec& spec, uint64_t seed,
                                  DatasetStore& store) {
  spec.validate();
  Workload w;
  w.spec = spec;
  uint64_t state = seed;

  std::vector<DataElement> elements;
  DataElement x;
  x.name = "x";
  x.kind = ElemKind::Dimension;
  x.type = ElemType::Int64;
  x.domain = Domain::implicit(ElemType::Int64, 0,
                              static_cast<double>(w.width() - 1), 1);
  DataElement y = x;
  y.name = "y";
  y.domain = Domain::implicit(ElemType::Int64, 0,
                              static_cast<double>(w.height() - 1), 1);
  DataElement v;
  v.name = "v";
  v.kind = ElemKind::Attribute;
  v.type = ElemType::Float64;
  elements = {x, y, v};
  w.schema.define_tar(w.tar_name, std::nullopt, elements, {});

  size_t tile_cells = spec.tile_x * spec.tile_y;
  w.values.assign(static_cast<size_t>(w.width()) * spec.tile_y, 0.0);
  w.occupied.assign(w.values.size(), 0);

  for (size_t t = 0; t < spec.tiles; ++t) {
    int64_t x_lo = static_cast<int64_t>(t * spec.tile_x);
    int64_t x_hi = x_lo + static_cast<int64_t>(spec.tile_x) - 1;
    if (spec.dense) {
      auto b = store.make_builder(ElemType::Float64);
      for (size_t i = 0; i < tile_cells; ++i) {
        double val = unit_double(splitmix64(state));
        b.push_raw(val);
        int64_t cx = x_lo + static_cast<int64_t>(i / spec.tile_y);
        int64_t cy = static_cast<int64_t>(i % spec.tile_y);
        size_t idx = w.cell_index(cx, cy);
        w.values[idx] = val;
        w.occupied[idx] = 1;
      }
      std::vector<DimensionSpec> specs(2);
      specs[0].dimension = "x";
      specs[0].kind = SpecKind::Ordered;
      specs[0].lower = x_lo;
      specs[0].upper = x_hi;
      specs[1].dimension = "y";
      specs[1].kind = SpecKind::Ordered;
      specs[1].lower = 0;
      specs[1].upper = static_cast<int64_t>(spec.tile_y) - 1;
      w.schema.attach_subtar(w.tar_name, std::move(specs), {{"v", b.seal()}});
    } else {
      auto bx = store.make_builder(ElemType::Int64);
      auto by = store.make_builder(ElemType::Int64);
      auto bv = store.make_builder(ElemType::Float64);
      size_t kept = 0;
      for (size_t i = 0; i < tile_cells; ++i) {
        uint64_t h = splitmix64(state);
        double val = unit_double(splitmix64(state));
        bool keep = unit_double(h) < spec.fill || (i + 1 == tile_cells && kept == 0);
        if (!keep) continue;
        ++kept;
        int64_t cx = x_lo + static_cast<int64_t>(i / spec.tile_y);
        int64_t cy = static_cast<int64_t>(i % spec.tile_y);
        bx.push_raw(cx);
        by.push_raw(cy);
        bv.push_raw(val);
        size_t idx = w.cell_index(cx, cy);
        w.values[idx] = val;
        w.occupied[idx] = 1;
      }
      std::vector<DimensionSpec> specs(2);
      specs[0].dimension = "x";
      specs[0].kind = SpecKind::Total;
      specs[0].lower = x_lo;
      specs[0].upper = x_hi;
      specs[0].data = bx.seal();
      specs[1].dimension = "y";
      specs[1].kind = SpecKind::Total;
      specs[1].lower = 0;
      specs[1].upper = static_cast<int64_t>(spec.tile_y) - 1;
      specs[1].data = by.seal();
      w.schema.attach_subtar(w.tar_name, std::move(specs), {{"v", bv.seal()}});
    }
  }

  // windows span whole tiles along x and a selectivity-sized slab along y,
  // so every touched tile contributes the same fraction of its cells
  int64_t y_len =
      std::max<int64_t>(1, std::llround(spec.selectivity * double(spec.tile_y)));
  for (size_t r = 0; r < spec.repetitions; ++r) {
    size_t slots = spec.tiles - spec.touched_tiles + 1;
    size_t j0 = static_cast<size_t>(splitmix64(state) % slots);
    Window win;
    win.x0 = static_cast<int64_t>(j0 * spec.tile_x);
    win.x1 = win.x0 + static_cast<int64_t>(spec.touched_tiles * spec.tile_x) - 1;
    win.y0 = 0;
    win.y1 = y_len - 1;
    w.windows.push_back(win);
  }
  return w;
}

struct SuiteRow {
  std::string query_id;
  uint64_t tiles_touched = 0;
  uint64_t cells_visited = 0;
  double wall_ms = 0;       // median over repetitions
  double wall_ms_min = 0;
  bool oracle_ok = false;
};

struct SuiteReport {
  std::vector<SuiteRow> rows;

  std::string csv() const {
    std::string out = "query_id,tiles_touched,cells_visited,wall_ms,oracle_ok\n";
    for (const auto& r : rows) {
      char buf[64];
      snprintf(buf, sizeof(buf), "%.3f", r.wall_ms);
      out += r.query_id + "," + std::to_string(r.tiles_touched) + "," +
             std::to_string(r.cells_visited) + "," + buf + "," +
             (r.oracle_ok ? "1" : "0") + "\n";
    }
    return out;
  }
};

// Materializes an engine result into (x, y, value) rows sorted by location.
inline std::vector<std::tuple<int64_t, int64_t, double>> window_result_rows(
    const QueryResult& result) {
  std::vector<std::tuple<int64_t, int64_t, double>> rows;
  for (const auto& sub : result.subtars) {
    size_t xi = 0, yi = 0;
    for (size_t d = 0; d < sub->dim_specs.size(); ++d) {
      if (sub->dim_specs[d].dimension == "x") xi = d;
      if (sub->dim_specs[d].dimension == "y") yi = d;
    }
    const auto& ds = sub->atts.at("v");
    bool constant = ds->length() == 1 && sub->length != 1;
    enumerate_cells(*sub, nullptr, nullptr,
                    [&](std::span<const int64_t> loc, size_t offset) {
                      rows.emplace_back(loc[xi], loc[yi],
                                        (constant ? ds->at(0) : ds->at(offset))
                                            .as_double());
                    });
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Runs one window workload: executes each window query, validates the result
// against the brute-force oracle and reports counters plus median/min wall
// time over the repetitions.
inline SuiteReport run_suite(const WorkloadSpec& spec, uint64_t seed,
                             DatasetStore& store, unsigned parallel_grain = 1) {
  Workload w = generate_workload(spec, seed, store);
  SuiteReport report;
  ExecConfig cfg;
  cfg.parallel_grain = parallel_grain;

  for (size_t q = 0; q < w.windows.size(); ++q) {
    const Window& win = w.windows[q];
    std::string text = win.query(w.tar_name);
    Statement st = parse(text, w.schema);

    std::vector<double> times;
    QueryResult result;
    for (size_t rep = 0; rep < std::max<size_t>(spec.repetitions, 1); ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      QueryResult r = run_plan(*st.query, w.schema, store, cfg);
      auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (rep == 0) result = std::move(r);
    }
    std::sort(times.begin(), times.end());

    auto rows = window_result_rows(result);
    std::vector<std::tuple<int64_t, int64_t, double>> expected;
    for (int64_t cx = win.x0; cx <= win.x1; ++cx)
      for (int64_t cy = win.y0; cy <= win.y1; ++cy) {
        size_t idx = w.cell_index(cx, cy);
        if (w.occupied[idx]) expected.emplace_back(cx, cy, w.values[idx]);
      }
    bool ok = rows == expected;

    SuiteRow row;
    row.query_id = "window_t" + std::to_string(spec.tiles) +
                   (spec.dense ? "_dense" : "_sparse") + "_touch" +
                   std::to_string(spec.touched_tiles) + "_sel" +
                   std::to_string(static_cast<int>(spec.selectivity * 100)) +
                   "_q" + std::to_string(q);
    row.tiles_touched = result.stats.layout.subtars_touched;
    row.cells_visited = result.stats.layout.cells_visited;
    row.wall_ms = times[times.size() / 2];
    row.wall_ms_min = times.front();
    row.oracle_ok = ok;
    if (!ok)
      throw Error(ErrorCode::OracleMismatch, row.query_id);
    report.rows.push_back(std::move(row));
  }
  return report;
}

struct IngestReport {
  size_t elements = 0;
  double ingest_ms = 0;
  double copy_ms = 0;
  double ratio = 0;
  uint64_t element_touches = 0;
};

// Benchmarks the adoption ingestion path against a raw byte-for-byte copy of
// the same file on the same filesystem.
inline IngestReport ingest_bench(DatasetStore& store, size_t n, ElemType type,
                                 uint64_t seed = 1) {
  namespace fs = std::filesystem;
  IngestReport rep;
  rep.elements = n;
  std::string dir = store.config().temp_dir;
  std::string src = dir + "/ingest_src.bin";
  std::string copy_dest = dir + "/ingest_copy.bin";
  {
    // source file: raw little-endian elements, written in 1 MiB chunks
    std::ofstream f(src, std::ios::trunc | std::ios::binary);
    uint64_t state = seed;
    size_t total = n * elem_width(type);
    std::vector<uint64_t> chunk(131072);
    size_t written = 0;
    while (written < total) {
      for (auto& word : chunk) word = splitmix64(state);
      size_t take = std::min(total - written, chunk.size() * 8);
      f.write(reinterpret_cast<const char*>(chunk.data()),
              static_cast<std::streamsize>(take));
      written += take;
    }
  }

  auto t0 = std::chrono::steady_clock::now();
  fs::copy_file(src, copy_dest, fs::copy_options::overwrite_existing);
  auto t1 = std::chrono::steady_clock::now();
  rep.copy_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  static std::atomic<uint64_t> run_id{0};
  std::string name = "ingest_bench_" + std::to_string(run_id.fetch_add(1));
  store.reset_element_touches();
  auto t2 = std::chrono::steady_clock::now();
  store.create_dataset(name, src, type, AdoptMode::Copy);
  auto t3 = std::chrono::steady_clock::now();
  rep.ingest_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
  rep.element_touches = store.element_touches();
  rep.ratio = rep.copy_ms > 0 ? rep.ingest_ms / rep.copy_ms : 0;

  std::error_code ec;
  fs::remove(src, ec);
  fs::remove(copy_dest, ec);
  store.drop(name);
  return rep;
}

}  // namespace savime
