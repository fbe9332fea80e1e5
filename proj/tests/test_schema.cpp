#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace savime;
using namespace savime::testing;

namespace {

DataElement dim(const std::string& name, DomainPtr domain,
                ElemType type = ElemType::Int64) {
  DataElement e;
  e.name = name;
  e.kind = ElemKind::Dimension;
  e.type = type;
  e.domain = std::move(domain);
  return e;
}

DataElement att(const std::string& name, ElemType type = ElemType::Float64) {
  DataElement e;
  e.name = name;
  e.kind = ElemKind::Attribute;
  e.type = type;
  return e;
}

bool fails_with(ErrorCode code, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

}  // namespace

TEST_CASE("define_type") {
  TarSchema schema;

  SECTION("geometry type with mandatory point roles") {
    const TarType& t = schema.define_type("cartesian_geometry",
                                          {"id", "x", "y", "z"},
                                          {"time", "trial"});
    REQUIRE(t.mandatory.size() == 4);
    REQUIRE(schema.roles().count("id") == 1);
    REQUIRE(schema.roles().count("trial") == 1);
  }

  SECTION("degenerate empty type is allowed") {
    REQUIRE_NOTHROW(schema.define_type("t", {}, {}));
  }

  SECTION("overlapping role sets rejected") {
    REQUIRE(fails_with(ErrorCode::OverlappingRoleSets,
                       [&] { schema.define_type("t", {"a"}, {"a"}); }));
  }

  SECTION("duplicate type name") {
    schema.define_type("t", {"a"}, {});
    REQUIRE(fails_with(ErrorCode::DuplicateType,
                       [&] { schema.define_type("t", {"b"}, {}); }));
  }
}

TEST_CASE("define_tar") {
  TarSchema schema;
  schema.define_type("time_field", {"id", "value"}, {"time", "trial"});
  schema.define_type("cartesian_geometry", {"id", "x", "y", "z"},
                     {"time", "trial"});

  SECTION("typed field TAR over the simulation mesh sizes") {
    auto tar = schema.define_tar(
        "field", "time_field",
        {dim("time", Domain::implicit(ElemType::Int64, 0, 99, 1)),
         dim("point", Domain::implicit(ElemType::Int64, 0, 1899999, 1)),
         att("pressure")},
        {{"point", "id"}, {"pressure", "value"}, {"time", "time"}});
    REQUIRE(tar->def->binding);
    REQUIRE(schema.validate_type(*tar));
    REQUIRE(tar->subtars.empty());
    REQUIRE(tar->def->element_for_role("id")->name == "point");
  }

  SECTION("minimal untyped single-cell TAR") {
    auto tar = schema.define_tar(
        "a", std::nullopt,
        {dim("x", Domain::implicit(ElemType::Int64, 0, 0, 1)),
         att("v", ElemType::Int32)},
        {});
    REQUIRE(tar->def->dimensions()[0]->domain->cardinality() == 1);
  }

  SECTION("missing mandatory roles are rejected") {
    REQUIRE(fails_with(ErrorCode::MissingMandatoryRole, [&] {
      schema.define_tar("b", "cartesian_geometry",
                        {dim("i", Domain::implicit(ElemType::Int64, 0, 9, 1)),
                         att("x")},
                        {{"x", "x"}});
    }));
  }

  SECTION("role map must be injective") {
    REQUIRE(fails_with(ErrorCode::NonInjectiveRoleMap, [&] {
      schema.define_tar("c", "time_field",
                        {dim("i", Domain::implicit(ElemType::Int64, 0, 9, 1)),
                         att("u"), att("v")},
                        {{"i", "id"}, {"u", "value"}, {"v", "value"}});
    }));
  }

  SECTION("unknown type") {
    REQUIRE(fails_with(ErrorCode::UnknownType, [&] {
      schema.define_tar("d", "nope",
                        {dim("i", Domain::implicit(ElemType::Int64, 0, 9, 1))},
                        {});
    }));
  }

  SECTION("duplicate TAR name") {
    schema.define_tar("t1", std::nullopt,
                      {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1))},
                      {});
    REQUIRE(fails_with(ErrorCode::DuplicateTar, [&] {
      schema.define_tar("t1", std::nullopt,
                        {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1))},
                        {});
    }));
  }
}

TEST_CASE("validate_type") {
  TarSchema schema;
  schema.define_type("pair", {"first", "second"}, {"extra"});

  SECTION("fully mapped TAR validates") {
    auto tar = schema.define_tar(
        "t", "pair",
        {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1)), att("v")},
        {{"i", "first"}, {"v", "second"}});
    REQUIRE(schema.validate_type(*tar));
  }

  SECTION("untyped TAR validates vacuously") {
    auto tar = schema.define_tar(
        "u", std::nullopt,
        {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1))}, {});
    REQUIRE(schema.validate_type(*tar));
  }

  SECTION("unmapped element fails the strict predicate") {
    auto tar = schema.define_tar(
        "w", "pair",
        {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1)), att("v"),
         att("unmapped")},
        {{"i", "first"}, {"v", "second"}});
    REQUIRE_FALSE(schema.validate_type(*tar));
  }

  SECTION("mandatory role dropped fails") {
    // crafted directly: define_tar would reject this map
    Tar tar;
    auto def = std::make_shared<TarDef>();
    def->name = "bad";
    def->elements = {dim("i", Domain::implicit(ElemType::Int64, 0, 3, 1))};
    def->binding = TypeBinding{"pair", {{"i", "first"}}};
    tar.def = def;
    REQUIRE_FALSE(schema.validate_type(tar));
  }
}

TEST_CASE("element_image") {
  TempDir dir("image");
  DatasetStore store(test_storage(dir));
  TarSchema schema;
  schema.define_tar("t", std::nullopt,
                    {dim("x", Domain::implicit(ElemType::Float64, 0, 10, 2),
                         ElemType::Float64),
                     att("v", ElemType::Int64)},
                    {});

  SECTION("no subTARs: empty image") {
    REQUIRE(schema.element_image(*schema.require_tar("t"), "x").empty());
  }

  SECTION("attribute image deduplicates") {
    DimensionSpec spec;
    spec.dimension = "x";
    spec.kind = SpecKind::Ordered;
    spec.lower = 0;
    spec.upper = 2;
    schema.attach_subtar("t", {spec},
                         {{"v", store.from_values(ElemType::Int64,
                                                  ints({3, 3, 7}))}});
    auto image = schema.element_image(*schema.require_tar("t"), "v");
    REQUIRE(image.size() == 2);
    REQUIRE(image.count(Scalar(int64_t{3})) == 1);
    REQUIRE(image.count(Scalar(int64_t{7})) == 1);
  }

  SECTION("dense dimension image is the whole domain") {
    DimensionSpec spec;
    spec.dimension = "x";
    spec.kind = SpecKind::Ordered;
    spec.lower = 0;
    spec.upper = 5;
    std::vector<Scalar> v(6, Scalar(1.0));
    schema.attach_subtar("t", {spec},
                         {{"v", store.from_values(ElemType::Int64,
                                                  ints({1, 1, 1, 1, 1, 1}))}});
    auto image = schema.element_image(*schema.require_tar("t"), "x");
    std::vector<double> got;
    for (const auto& s : image) got.push_back(s.as_double());
    REQUIRE(got == std::vector<double>{0.0, 2.0, 4.0, 6.0, 8.0, 10.0});
  }

  SECTION("unknown element") {
    REQUIRE_THROWS_AS(schema.element_image(*schema.require_tar("t"), "q"),
                      Error);
  }
}

TEST_CASE("check_link") {
  TempDir dir("link");
  DatasetStore store(test_storage(dir));
  TarSchema schema;

  auto make_tar = [&](const std::string& name, ElemType att_type,
                      const std::vector<Scalar>& values) {
    schema.define_tar(
        name, std::nullopt,
        {dim("i", Domain::implicit(ElemType::Int64, 0, 9, 1)), att("v", att_type)},
        {});
    if (values.empty()) return;
    DimensionSpec spec;
    spec.dimension = "i";
    spec.kind = SpecKind::Ordered;
    spec.lower = 0;
    spec.upper = int64_t(values.size()) - 1;
    schema.attach_subtar(name, {spec}, {{"v", store.from_values(att_type, values)}});
  };

  SECTION("subset holds") {
    make_tar("a", ElemType::Int64, ints({1, 2}));
    make_tar("b", ElemType::Int64, ints({1, 2, 3}));
    REQUIRE(schema.check_link({"a", "v", "b", "v"}));
  }

  SECTION("subset fails") {
    make_tar("a", ElemType::Int64, ints({1, 4}));
    make_tar("b", ElemType::Int64, ints({1, 2, 3}));
    REQUIRE_FALSE(schema.check_link({"a", "v", "b", "v"}));
  }

  SECTION("empty left side is a subset of anything") {
    make_tar("a", ElemType::Int64, {});
    make_tar("b", ElemType::Int64, ints({1}));
    REQUIRE(schema.check_link({"a", "v", "b", "v"}));
  }

  SECTION("integer and float elements are incomparable") {
    make_tar("a", ElemType::Int64, ints({1}));
    make_tar("b", ElemType::Float64, doubles({1.0}));
    REQUIRE(fails_with(ErrorCode::IncomparableTypes,
                       [&] { schema.check_link({"a", "v", "b", "v"}); }));
  }

  SECTION("appending values to the right side never flips true to false") {
    make_tar("a", ElemType::Int64, ints({2, 5}));
    make_tar("b", ElemType::Int64, ints({2, 5, 9}));
    Link link{"a", "v", "b", "v"};
    REQUIRE(schema.check_link(link));
    std::mt19937_64 rng(7);
    int64_t next_lower = 3;
    for (int iter = 0; iter < 20; ++iter) {
      DimensionSpec spec;
      spec.dimension = "i";
      spec.kind = SpecKind::Ordered;
      spec.lower = next_lower;
      spec.upper = next_lower;
      next_lower++;
      if (next_lower > 9) break;
      schema.attach_subtar(
          "b", {spec},
          {{"v", store.from_values(ElemType::Int64,
                                   {Scalar(int64_t(rng() % 100))})}});
      REQUIRE(schema.check_link(link));
    }
  }
}

TEST_CASE("schema invariants hold under random DDL sequences") {
  TempDir dir("ddl_prop");
  DatasetStore store(test_storage(dir));
  std::mt19937_64 rng(1234);

  for (int round = 0; round < 30; ++round) {
    TarSchema schema;
    // a pool of random types
    size_t ntypes = 1 + rng() % 3;
    for (size_t t = 0; t < ntypes; ++t) {
      std::vector<std::string> mandatory, optional;
      size_t nm = rng() % 3, no = rng() % 2;
      for (size_t i = 0; i < nm; ++i) mandatory.push_back("m" + std::to_string(i));
      for (size_t i = 0; i < no; ++i) optional.push_back("o" + std::to_string(i));
      schema.define_type("type" + std::to_string(t), mandatory, optional);
    }
    // random TAR definitions; invalid ones must be rejected atomically
    for (int i = 0; i < 10; ++i) {
      std::string name = "t" + std::to_string(rng() % 5);
      std::vector<DataElement> elements = {
          dim("d0", Domain::implicit(ElemType::Int64, 0, int64_t(rng() % 5), 1))};
      size_t natts = rng() % 3;
      for (size_t a = 0; a < natts; ++a) elements.push_back(att("a" + std::to_string(a)));
      std::optional<std::string> type;
      std::map<std::string, std::string> role_map;
      if (rng() % 2) {
        const TarType* t = schema.find_type("type" + std::to_string(rng() % ntypes));
        type = t->name;
        // attempt a (sometimes invalid) role map
        std::vector<std::string> roles(t->mandatory.begin(), t->mandatory.end());
        roles.insert(roles.end(), t->optional.begin(), t->optional.end());
        size_t ei = 0;
        for (const auto& r : roles) {
          if (ei >= elements.size()) break;
          if (rng() % 4 != 0) role_map[elements[ei++].name] = r;
        }
      }
      try {
        schema.define_tar(name, type, elements, role_map);
      } catch (const Error&) {
        // rejected definitions must not corrupt the schema
      }
    }
    // invariants over everything registered
    for (const auto& tar : schema.tars()) {
      std::set<std::string> dims, atts;
      for (const auto& e : tar->def->elements) {
        if (e.is_dimension())
          dims.insert(e.name);
        else
          atts.insert(e.name);
      }
      for (const auto& d : dims) REQUIRE(atts.count(d) == 0);
      if (tar->def->binding) {
        std::set<std::string> seen;
        for (const auto& [elem, role] : tar->def->binding->role_map) {
          REQUIRE(tar->def->find(elem) != nullptr);
          REQUIRE(seen.insert(role).second);  // injective
        }
        const TarType* t = schema.find_type(tar->def->binding->type_name);
        REQUIRE(t != nullptr);
        for (const auto& r : t->mandatory) REQUIRE(seen.count(r) == 1);
      }
    }
  }
}

TEST_CASE("validate_type holds for generated fully-mapped typed TARs") {
  std::mt19937_64 rng(99);
  for (int iter = 0; iter < 200; ++iter) {
    TarSchema schema;
    size_t nm = 1 + rng() % 3, no = rng() % 3;
    std::vector<std::string> mandatory, optional;
    for (size_t i = 0; i < nm; ++i) mandatory.push_back("m" + std::to_string(i));
    for (size_t i = 0; i < no; ++i) optional.push_back("o" + std::to_string(i));
    schema.define_type("T", mandatory, optional);

    // one element per covered role: the dimension plus attributes
    std::vector<std::string> wanted = mandatory;
    for (const auto& o : optional)
      if (rng() % 2) wanted.push_back(o);
    std::vector<DataElement> elements = {
        dim("d0", Domain::implicit(ElemType::Int64, 0, 3, 1))};
    std::map<std::string, std::string> role_map = {{"d0", wanted[0]}};
    for (size_t i = 1; i < wanted.size(); ++i) {
      std::string elem = "e" + std::to_string(i);
      elements.push_back(att(elem));
      role_map[elem] = wanted[i];
    }
    auto tar = schema.define_tar("t", "T", elements, role_map);
    REQUIRE(schema.validate_type(*tar));
  }
}
