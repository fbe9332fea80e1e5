#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "savime/engine.hpp"

namespace savime {

// Length-prefixed frames: 4-byte little-endian length (= payload size + 1),
// 1 byte kind, payload. QUERY and ERROR payloads are UTF-8 text.
enum class FrameKind : uint8_t {
  Query = 1,
  ResultSchema = 2,
  ResultBlock = 3,
  DatasetPush = 4,
  Error = 5,
  Done = 6,
};

struct Frame {
  FrameKind kind = FrameKind::Done;
  std::string payload;
};

inline constexpr uint32_t kMaxFramePayload = uint32_t(1) << 28;

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint16_t get_u16(const char* p) {
  return static_cast<uint16_t>(static_cast<uint8_t>(p[0]) |
                               (static_cast<uint8_t>(p[1]) << 8));
}

inline uint32_t get_u32(const char* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(p[i]);
  return v;
}

inline std::string encode_frame(FrameKind kind, std::string_view payload) {
  std::string out;
  out.reserve(5 + payload.size());
  put_u32(out, static_cast<uint32_t>(payload.size() + 1));
  out.push_back(static_cast<char>(kind));
  out.append(payload);
  return out;
}

enum class ReadStatus { Ok, Eof, Malformed };

// --- schema / result serialization -------------------------------------------

using nlohmann::json;

inline json wire_tardef_to_json(const TarDef& def) {
  json j;
  j["name"] = def.name;
  j["elements"] = json::array();
  for (const auto& e : def.elements) {
    json je = {{"name", e.name},
               {"kind", e.is_dimension() ? "dimension" : "attribute"},
               {"type", elem_name(e.type)}};
    if (e.domain) {
      if (e.domain->is_implicit()) {
        je["domain"] = {{"implicit",
                         {{"lower", e.domain->lower()},
                          {"upper", e.domain->upper()},
                          {"spacing", e.domain->spacing()}}}};
      } else {
        // explicit domain values travel inline
        json vals = json::array();
        const auto& ds = e.domain->values();
        for (size_t i = 0; i < ds->length(); ++i) {
          Scalar v = ds->at(i);
          if (v.is_integer())
            vals.push_back(v.as_int64());
          else
            vals.push_back(v.as_double());
        }
        je["domain"] = {{"values", std::move(vals)}};
      }
    }
    j["elements"].push_back(std::move(je));
  }
  if (def.binding)
    j["type"] = {{"name", def.binding->type_name},
                 {"role_map", def.binding->role_map}};
  return j;
}

inline DatasetPtr wire_values_dataset(const std::string& name, ElemType type,
                                      const json& values) {
  std::vector<std::byte> bytes;
  bytes.reserve(values.size() * elem_width(type));
  auto put = [&bytes](const void* p, size_t n) {
    const std::byte* b = static_cast<const std::byte*>(p);
    bytes.insert(bytes.end(), b, b + n);
  };
  for (const auto& v : values) {
    switch (type) {
      case ElemType::Int32: {
        int32_t x = v.get<int32_t>();
        put(&x, 4);
        break;
      }
      case ElemType::Int64: {
        int64_t x = v.get<int64_t>();
        put(&x, 8);
        break;
      }
      case ElemType::Float32: {
        float x = v.get<float>();
        put(&x, 4);
        break;
      }
      case ElemType::Float64: {
        double x = v.get<double>();
        put(&x, 8);
        break;
      }
    }
  }
  return std::make_shared<Dataset>(name, type, std::move(bytes));
}

inline TarDefPtr wire_tardef_from_json(const json& j) {
  auto def = std::make_shared<TarDef>();
  def->name = j.value("name", "result");
  for (const auto& je : j.at("elements")) {
    DataElement e;
    e.name = je.at("name").get<std::string>();
    e.kind = je.at("kind").get<std::string>() == "dimension"
                 ? ElemKind::Dimension
                 : ElemKind::Attribute;
    if (!parse_elem_type(je.at("type").get<std::string>(), e.type))
      throw Error(ErrorCode::ProtocolError, "bad element type in schema");
    if (je.contains("domain")) {
      const json& jd = je.at("domain");
      if (jd.contains("implicit")) {
        const json& ji = jd.at("implicit");
        e.domain = Domain::implicit(e.type, ji.at("lower").get<double>(),
                                    ji.at("upper").get<double>(),
                                    ji.at("spacing").get<double>());
      } else {
        e.domain = Domain::explicit_values(
            e.type,
            wire_values_dataset("__domain_" + e.name, e.type, jd.at("values")));
      }
    }
    def->elements.push_back(std::move(e));
  }
  if (j.contains("type")) {
    TypeBinding b;
    b.type_name = j.at("type").at("name").get<std::string>();
    b.role_map = j.at("type").at("role_map")
                     .get<std::map<std::string, std::string>>();
    def->binding = std::move(b);
  }
  return def;
}

// --- per-subTAR frame group ----------------------------------------------------
//
// One subTAR becomes a group of RESULT_BLOCK frames:
//   block 0 (header): JSON with the dimension specs and dataset manifest
//   block 1 (dim data): one per Partial/Total spec, raw little-endian cells
//   block 2 (att data): one per attribute binding, raw little-endian cells
// Block payload: [u8 block kind][u16 name length][name][bytes].

inline std::string encode_block(uint8_t kind, const std::string& name,
                                std::string_view bytes) {
  std::string out;
  out.push_back(static_cast<char>(kind));
  put_u16(out, static_cast<uint16_t>(name.size()));
  out += name;
  out.append(bytes);
  return out;
}

inline std::vector<std::string> subtar_to_blocks(const SubTar& s) {
  std::vector<std::string> blocks;
  json header;
  header["length"] = s.length;
  header["dims"] = json::array();
  for (const auto& spec : s.dim_specs) {
    header["dims"].push_back({{"dimension", spec.dimension},
                              {"kind", spec_kind_name(spec.kind)},
                              {"lower", spec.lower},
                              {"upper", spec.upper},
                              {"data_type", spec.data
                                                ? elem_name(spec.data->type())
                                                : ""}});
  }
  header["atts"] = json::array();
  for (const auto& [name, ds] : s.atts)
    header["atts"].push_back(
        {{"name", name}, {"type", elem_name(ds->type())}, {"length", ds->length()}});
  blocks.push_back(encode_block(0, "", header.dump()));
  for (const auto& spec : s.dim_specs) {
    if (!spec.data) continue;
    auto b = spec.data->bytes();
    blocks.push_back(encode_block(
        1, spec.dimension,
        std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
  }
  for (const auto& [name, ds] : s.atts) {
    auto b = ds->bytes();
    blocks.push_back(encode_block(
        2, name,
        std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
  }
  return blocks;
}

// Client-side accumulator turning a block stream back into subTARs.
class SubtarDecoder {
 public:
  explicit SubtarDecoder(TarDefPtr schema) : schema_(std::move(schema)) {}

  // Feeds one RESULT_BLOCK payload; returns a finished subTAR when the block
  // starts a new group and the previous one is complete.
  SubTarPtr feed(std::string_view payload) {
    if (payload.size() < 3)
      throw Error(ErrorCode::ProtocolError, "short result block");
    uint8_t kind = static_cast<uint8_t>(payload[0]);
    uint16_t name_len = get_u16(payload.data() + 1);
    if (payload.size() < size_t(3) + name_len)
      throw Error(ErrorCode::ProtocolError, "truncated result block");
    std::string name(payload.substr(3, name_len));
    std::string_view bytes = payload.substr(3 + name_len);
    SubTarPtr finished;
    if (kind == 0) {
      finished = flush();
      header_ = json::parse(bytes, nullptr, false);
      if (header_.is_discarded())
        throw Error(ErrorCode::ProtocolError, "bad subtar header");
      dim_data_.clear();
      att_data_.clear();
    } else if (kind == 1) {
      dim_data_[name] = std::string(bytes);
    } else if (kind == 2) {
      att_data_[name] = std::string(bytes);
    } else {
      throw Error(ErrorCode::ProtocolError, "unknown block kind");
    }
    return finished;
  }

  SubTarPtr flush() {
    if (header_.is_null()) return nullptr;
    auto sub = std::make_shared<SubTar>();
    sub->tar = schema_;
    sub->length = header_.at("length").get<size_t>();
    for (const auto& jd : header_.at("dims")) {
      DimensionSpec spec;
      spec.dimension = jd.at("dimension").get<std::string>();
      std::string kind = jd.at("kind").get<std::string>();
      spec.kind = kind == "ordered" ? SpecKind::Ordered
                  : kind == "partial" ? SpecKind::Partial
                                      : SpecKind::Total;
      spec.lower = jd.at("lower").get<int64_t>();
      spec.upper = jd.at("upper").get<int64_t>();
      spec.domain = schema_->require(spec.dimension).domain;
      if (spec.kind != SpecKind::Ordered) {
        auto it = dim_data_.find(spec.dimension);
        if (it == dim_data_.end())
          throw Error(ErrorCode::ProtocolError,
                      "missing index data for " + spec.dimension);
        ElemType dt;
        if (!parse_elem_type(jd.at("data_type").get<std::string>(), dt))
          throw Error(ErrorCode::ProtocolError, "bad index data type");
        spec.data = bytes_dataset(spec.dimension, dt, it->second);
      }
      sub->dim_specs.push_back(std::move(spec));
    }
    for (const auto& ja : header_.at("atts")) {
      std::string name = ja.at("name").get<std::string>();
      ElemType t;
      if (!parse_elem_type(ja.at("type").get<std::string>(), t))
        throw Error(ErrorCode::ProtocolError, "bad attribute type");
      auto it = att_data_.find(name);
      if (it == att_data_.end())
        throw Error(ErrorCode::ProtocolError, "missing data for " + name);
      sub->atts[name] = bytes_dataset(name, t, it->second);
    }
    header_ = json();
    dim_data_.clear();
    att_data_.clear();
    return sub;
  }

 private:
  static DatasetPtr bytes_dataset(const std::string& name, ElemType type,
                                  const std::string& data) {
    std::vector<std::byte> buf(data.size());
    std::memcpy(buf.data(), data.data(), data.size());
    return std::make_shared<Dataset>(name, type, std::move(buf));
  }

  TarDefPtr schema_;
  json header_;
  std::map<std::string, std::string> dim_data_;
  std::map<std::string, std::string> att_data_;
};

// DATASET_PUSH payload: [u16 name length][name][u8 element type][raw bytes].
inline std::string encode_dataset_push(const std::string& name, ElemType type,
                                       std::span<const std::byte> bytes) {
  std::string out;
  put_u16(out, static_cast<uint16_t>(name.size()));
  out += name;
  out.push_back(static_cast<char>(type));
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return out;
}

struct DatasetPush {
  std::string name;
  ElemType type;
  std::string_view bytes;
};

inline DatasetPush decode_dataset_push(std::string_view payload) {
  if (payload.size() < 3)
    throw Error(ErrorCode::ProtocolError, "short dataset push");
  uint16_t name_len = get_u16(payload.data());
  if (payload.size() < size_t(3) + name_len)
    throw Error(ErrorCode::ProtocolError, "truncated dataset push");
  DatasetPush p;
  p.name = std::string(payload.substr(2, name_len));
  uint8_t t = static_cast<uint8_t>(payload[2 + name_len]);
  if (t < 1 || t > 4)
    throw Error(ErrorCode::ProtocolError, "bad element type");
  p.type = static_cast<ElemType>(t);
  p.bytes = payload.substr(3 + name_len);
  if (p.name.empty())
    throw Error(ErrorCode::ProtocolError, "dataset push without a name");
  return p;
}

}  // namespace savime
