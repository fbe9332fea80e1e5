#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace savime;
using namespace savime::testing;

namespace {

// A representative schema persisted through registered datasets only.
struct CatalogFixture {
  TempDir tmp{"catalog"};
  DatasetStore store{test_storage(tmp)};
  TarSchema schema;

  CatalogFixture() {
    store.create_dataset_literal("dom", ElemType::Float64,
                                 doubles({1.2, 2.3, 4.7, 7.9, 13.2}));
    store.create_dataset_literal("vals", ElemType::Float64,
                                 doubles({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    store.create_dataset_literal("present", ElemType::Int64, ints({0, 3}));
    store.create_dataset_literal("xs", ElemType::Int64, ints({0, 1, 1}));
    store.create_dataset_literal("ys", ElemType::Int64, ints({2, 0, 4}));
    store.create_dataset_literal("sparse_vals", ElemType::Float64,
                                 doubles({7, 8, 9}));

    schema.define_type("probe", {"key"}, {"aux"});

    DataElement x;
    x.name = "x";
    x.kind = ElemKind::Dimension;
    x.type = ElemType::Int64;
    x.domain = Domain::implicit(ElemType::Int64, 0, 4, 1);
    DataElement e;
    e.name = "e";
    e.kind = ElemKind::Dimension;
    e.type = ElemType::Float64;
    e.domain = Domain::explicit_values(ElemType::Float64, store.require("dom"));
    DataElement v;
    v.name = "v";
    v.kind = ElemKind::Attribute;
    v.type = ElemType::Float64;
    schema.define_tar("grid", "probe", {x, e, v}, {{"x", "key"}, {"v", "aux"}});

    DimensionSpec sx;
    sx.dimension = "x";
    sx.kind = SpecKind::Ordered;
    sx.lower = 0;
    sx.upper = 4;
    DimensionSpec se;
    se.dimension = "e";
    se.kind = SpecKind::Partial;
    se.lower = 0;
    se.upper = 4;
    se.data = store.require("present");
    schema.attach_subtar("grid", {sx, se}, {{"v", store.require("vals")}});

    DataElement y = x;
    y.name = "y";
    schema.define_tar("coo", std::nullopt, {x, y, v}, {});
    DimensionSpec tx;
    tx.dimension = "x";
    tx.kind = SpecKind::Total;
    tx.lower = 0;
    tx.upper = 4;
    tx.data = store.require("xs");
    DimensionSpec ty = tx;
    ty.dimension = "y";
    ty.data = store.require("ys");
    schema.attach_subtar("coo", {tx, ty}, {{"v", store.require("sparse_vals")}});

    schema.add_link({"coo", "v", "grid", "v"});
  }
};

}  // namespace

TEST_CASE_METHOD(CatalogFixture, "catalog round trip") {
  std::string path = tmp.sub("catalog.json");
  persist_catalog(schema, store, path);

  TempDir tmp2("catalog_load");
  StorageConfig cfg = test_storage(tmp2);
  DatasetStore store2(cfg);
  TarSchema loaded = load_catalog(path, store2);

  // structural equality through the canonical serialization
  REQUIRE(schema_to_json(loaded, store2) == schema_to_json(schema, store));

  // the loaded schema is usable: run a query against it
  auto st = parse("select(grid, x, e, v)", loaded);
  auto r = run_plan(*st.query, loaded, store2, {});
  REQUIRE(r.total_cells() == 10);
  REQUIRE(loaded.check_link(loaded.links()[0]) ==
          schema.check_link(schema.links()[0]));
}

TEST_CASE_METHOD(CatalogFixture, "save load save is byte-identical") {
  std::string p1 = tmp.sub("c1.json");
  persist_catalog(schema, store, p1);
  TempDir tmp2("idem");
  DatasetStore store2(test_storage(tmp2));
  TarSchema loaded = load_catalog(p1, store2);
  std::string p2 = tmp.sub("c2.json");
  persist_catalog(loaded, store2, p2);
  REQUIRE(read_file(p1) == read_file(p2));
}

TEST_CASE_METHOD(CatalogFixture, "missing dataset file names the dataset") {
  std::string path = tmp.sub("catalog.json");
  persist_catalog(schema, store, path);
  std::filesystem::remove(store.require("vals")->path());
  TempDir tmp2("missing");
  DatasetStore store2(test_storage(tmp2));
  try {
    load_catalog(path, store2);
    FAIL("expected CorruptCatalog");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::CorruptCatalog);
    REQUIRE(std::string(e.what()).find("vals") != std::string::npos);
  }
}

TEST_CASE("absent catalog file loads an empty schema") {
  TempDir tmp("fresh");
  DatasetStore store(test_storage(tmp));
  TarSchema schema = load_catalog(tmp.sub("nope.json"), store);
  REQUIRE(schema.tars().empty());
  REQUIRE(schema.types().empty());
}

TEST_CASE("corrupt catalog reports the offending key") {
  TempDir tmp("corrupt");
  DatasetStore store(test_storage(tmp));
  std::string bad = "{\"datasets\": [{\"name\": \"x\"}]}";
  write_file(tmp.sub("bad.json"), bad.data(), bad.size());
  try {
    load_catalog(tmp.sub("bad.json"), store);
    FAIL("expected CorruptCatalog");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::CorruptCatalog);
    REQUIRE(std::string(e.what()).find("datasets") != std::string::npos);
  }
}

TEST_CASE("database executes statements and persists across reopen") {
  TempDir tmp("db");
  Config cfg;
  cfg.storage_dir = tmp.sub("data");
  cfg.log_level = "error";

  {
    Database db(cfg);
    REQUIRE_FALSE(db.execute("create_dataset_literal(vals, float64, "
                             "\"0.5, 1.5, 2.5, 3.5\")")
                      .is_query);
    db.execute("create_type(probe, \"key\", \"aux\")");
    db.execute("create_tar(t, probe, \"x,implicit,int64,0,3,1\", "
               "\"v,float64\", \"x:key, v:aux\")");
    db.execute("load_subtar(t, \"x,ordered,0,3\", \"v:vals\")");
    auto r = db.execute("aggregate(t, sum, v, s, )");
    REQUIRE(r.is_query);
    REQUIRE(value_at(*r.result->subtars[0], 0, "s").as_double() == 8.0);
  }
  {
    // reopen: catalog restores datasets, types, TARs and subTARs
    Database db(cfg);
    auto r = db.query("where(t, v > 1.0)");
    REQUIRE(r.total_cells() == 3);
    REQUIRE(db.snapshot()->find_type("probe") != nullptr);

    // a dataset referenced by a subTAR cannot be dropped
    try {
      db.execute("drop_dataset(vals)");
      FAIL("expected DatasetInUse");
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::DatasetInUse);
    }
  }
}

TEST_CASE("materialize registers a stored TAR") {
  TempDir tmp("mater");
  Config cfg;
  cfg.storage_dir = tmp.sub("data");
  cfg.log_level = "error";
  Database db(cfg);
  db.execute("create_dataset_literal(vals, int64, \"5, -2, 7, 0\")");
  db.execute("create_tar(t, \"x,implicit,int64,0,3,1\", \"v,int64\")");
  db.execute("load_subtar(t, \"x,ordered,0,3\", \"v:vals\")");
  auto st = db.execute("materialize(where(t, v > 0), pos)");
  REQUIRE_FALSE(st.is_query);

  auto r = db.query("aggregate(pos, count, v, n, )");
  REQUIRE(value_at(*r.subtars[0], 0, "n").as_int64() == 2);

  // survives a reopen: the promoted datasets are registered files
  Database db2(cfg);
  auto r2 = db2.query("aggregate(pos, sum, v, s, )");
  REQUIRE(value_at(*r2.subtars[0], 0, "s").as_int64() == 12);
}
