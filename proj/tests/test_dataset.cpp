#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace savime;
using namespace savime::testing;

TEST_CASE("create_dataset adopts raw binary files") {
  TempDir dir("dataset");
  DatasetStore store(test_storage(dir));

  SECTION("80-byte float64 file has 10 cells") {
    std::vector<double> values(10, 1.5);
    write_file(dir.sub("ten.bin"), values.data(), 80);
    auto ds = store.create_dataset("ten", dir.sub("ten.bin"), ElemType::Float64);
    REQUIRE(ds->length() == 10);
    REQUIRE(ds->at(0).as_double() == 1.5);
    // on-disk size matches length * element width exactly
    REQUIRE(std::filesystem::file_size(ds->path()) ==
            ds->length() * elem_width(ds->type()));
  }

  SECTION("81-byte file is rejected") {
    std::vector<char> junk(81, 0);
    write_file(dir.sub("bad.bin"), junk.data(), junk.size());
    REQUIRE_THROWS_MATCHES(
        store.create_dataset("bad", dir.sub("bad.bin"), ElemType::Float64),
        Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
          return e.code() == ErrorCode::BadSize;
        }));
  }

  SECTION("missing source file") {
    REQUIRE_THROWS_AS(
        store.create_dataset("x", dir.sub("nope.bin"), ElemType::Int32), Error);
  }

  SECTION("duplicate name") {
    std::vector<double> values(4, 0);
    write_file(dir.sub("a.bin"), values.data(), 32);
    write_file(dir.sub("b.bin"), values.data(), 32);
    store.create_dataset("d", dir.sub("a.bin"), ElemType::Float64);
    REQUIRE_THROWS_MATCHES(
        store.create_dataset("d", dir.sub("b.bin"), ElemType::Float64), Error,
        Catch::Matchers::Predicate<Error>([](const Error& e) {
          return e.code() == ErrorCode::DuplicateDataset;
        }));
  }

  SECTION("adoption does no element-level work") {
    std::vector<int64_t> values(50000, 7);
    write_file(dir.sub("big.bin"), values.data(), values.size() * 8);
    store.reset_element_touches();
    store.create_dataset("big", dir.sub("big.bin"), ElemType::Int64);
    REQUIRE(store.element_touches() == 0);
    // the move path is also touch-free
    write_file(dir.sub("big2.bin"), values.data(), values.size() * 8);
    store.create_dataset("big2", dir.sub("big2.bin"), ElemType::Int64,
                         AdoptMode::Move);
    REQUIRE(store.element_touches() == 0);
    REQUIRE_FALSE(std::filesystem::exists(dir.sub("big2.bin")));
  }
}

TEST_CASE("create_dataset_literal") {
  TempDir dir("literal");
  DatasetStore store(test_storage(dir));

  SECTION("explicit domain example values") {
    auto ds = store.create_dataset_literal("d", ElemType::Float64,
                                           doubles({1.2, 2.3, 4.7, 7.9, 13.2}));
    REQUIRE(ds->length() == 5);
    REQUIRE(ds->at(2).as_double() == 4.7);
    REQUIRE(store.element_touches() == 5);
  }

  SECTION("single cell") {
    auto ds = store.create_dataset_literal("e", ElemType::Int32, ints({0}));
    REQUIRE(ds->length() == 1);
  }

  SECTION("empty list rejected") {
    REQUIRE_THROWS_AS(store.create_dataset_literal("f", ElemType::Int64, {}),
                      Error);
  }
}

TEST_CASE("read_range") {
  TempDir dir("read_range");
  DatasetStore store(test_storage(dir));
  auto ds = store.create_dataset_literal("d", ElemType::Float64,
                                         doubles({1.2, 2.3, 4.7, 7.9, 13.2}));

  SECTION("middle slice") {
    auto bytes = DatasetStore::read_range(*ds, 2, 2);
    const double* v = reinterpret_cast<const double*>(bytes.data());
    REQUIRE(v[0] == 4.7);
    REQUIRE(v[1] == 7.9);
  }

  SECTION("whole dataset") {
    auto bytes = DatasetStore::read_range(*ds, 0, 5);
    REQUIRE(bytes.size() == 40);
  }

  SECTION("out of bounds") {
    REQUIRE_THROWS_MATCHES(DatasetStore::read_range(*ds, 4, 2), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::OutOfBounds;
                           }));
  }
}

TEST_CASE("filter_dataset") {
  TempDir dir("filter");
  DatasetStore store(test_storage(dir));
  auto ds = store.create_dataset_literal("d", ElemType::Int64, ints({5, 6, 7}));

  SECTION("keeps marked cells in order") {
    auto out = store.filter_dataset(*ds, {true, false, true});
    REQUIRE(out->length() == 2);
    REQUIRE(out->at(0).as_int64() == 5);
    REQUIRE(out->at(1).as_int64() == 7);
    REQUIRE(out->origin() == DatasetOrigin::Derived);
  }

  SECTION("all-false mask gives an empty derived dataset") {
    auto out = store.filter_dataset(*ds, {false, false, false});
    REQUIRE(out->length() == 0);
  }

  SECTION("length mismatch") {
    REQUIRE_THROWS_MATCHES(store.filter_dataset(*ds, {true, false, true, true}),
                           Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::LengthMismatch;
                           }));
  }
}

TEST_CASE("derived datasets are temporary and budgeted") {
  TempDir dir("derived");

  SECTION("temp file removed when the last reference drops") {
    DatasetStore store(test_storage(dir));
    std::string path;
    {
      auto b = store.make_builder(ElemType::Int64);
      b.push(Scalar(int64_t{1}));
      auto ds = b.seal();
      path = ds->path();
      REQUIRE(std::filesystem::exists(path));
      REQUIRE(store.resident_derived_bytes() == 8);
    }
    REQUIRE_FALSE(std::filesystem::exists(path));
    REQUIRE(store.resident_derived_bytes() == 0);
  }

  SECTION("budget overrun raises ResourceExhausted") {
    DatasetStore store(test_storage(dir, 64));
    auto b = store.make_builder(ElemType::Float64);
    for (int i = 0; i < 100; ++i) b.push(Scalar(double(i)));
    REQUIRE_THROWS_MATCHES(b.seal(), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::ResourceExhausted;
                           }));
  }
}

TEST_CASE("literal round trip property") {
  TempDir dir("roundtrip");
  DatasetStore store(test_storage(dir));
  std::mt19937_64 rng(42);

  for (int iter = 0; iter < 50; ++iter) {
    size_t n = 1 + rng() % 64;
    ElemType type = static_cast<ElemType>(1 + rng() % 4);
    std::vector<Scalar> values;
    for (size_t i = 0; i < n; ++i) {
      if (elem_is_integer(type))
        values.push_back(Scalar(int64_t(rng() % 20001) - 10000));
      else
        values.push_back(Scalar(double(rng() % 100000) / 64.0));
    }
    std::string name = "rt" + std::to_string(iter);
    auto ds = store.create_dataset_literal(name, type, values);
    REQUIRE(ds->length() == n);
    REQUIRE(std::filesystem::file_size(ds->path()) == n * elem_width(type));
    for (size_t i = 0; i < n; ++i) {
      Scalar got = ds->at(i);
      if (elem_is_integer(type)) {
        REQUIRE(got.as_int64() == values[i].as_int64());
      } else if (type == ElemType::Float64) {
        REQUIRE(got.as_double() == values[i].as_double());
      } else {
        REQUIRE(got.as_double() == double(float(values[i].as_double())));
      }
    }
  }
}

TEST_CASE("drop_dataset removes registry entry and file") {
  TempDir dir("drop");
  DatasetStore store(test_storage(dir));
  auto ds = store.create_dataset_literal("d", ElemType::Int32, ints({1, 2}));
  std::string path = ds->path();
  store.drop("d");
  REQUIRE(store.find("d") == nullptr);
  REQUIRE_FALSE(std::filesystem::exists(path));
  REQUIRE_THROWS_AS(store.drop("d"), Error);
}
