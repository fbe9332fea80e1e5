#pragma once

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "savime/common.hpp"

namespace savime {

namespace fs = std::filesystem;

// Read-only memory mapping over a whole file.
class MappedFile {
 public:
  MappedFile() = default;

  explicit MappedFile(const std::string& path, bool prefault = false) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0)
      throw Error(ErrorCode::Unreadable, path + ": " + std::strerror(errno));
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      throw Error(ErrorCode::Unreadable, path);
    }
    size_ = static_cast<size_t>(st.st_size);
    if (size_ > 0) {
      int flags = MAP_PRIVATE | (prefault ? MAP_POPULATE : 0);
      void* p = ::mmap(nullptr, size_, PROT_READ, flags, fd, 0);
      if (p == MAP_FAILED) {
        ::close(fd);
        throw Error(ErrorCode::Unreadable, "mmap failed for " + path);
      }
      base_ = p;
    }
    ::close(fd);
  }

  MappedFile(MappedFile&& o) noexcept : base_(o.base_), size_(o.size_) {
    o.base_ = nullptr;
    o.size_ = 0;
  }
  MappedFile& operator=(MappedFile&& o) noexcept {
    reset();
    std::swap(base_, o.base_);
    std::swap(size_, o.size_);
    return *this;
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() { reset(); }

  const std::byte* data() const { return static_cast<const std::byte*>(base_); }
  size_t size() const { return size_; }

 private:
  void reset() {
    if (base_) ::munmap(base_, size_);
    base_ = nullptr;
    size_ = 0;
  }
  void* base_ = nullptr;
  size_t size_ = 0;
};

enum class DatasetOrigin : uint8_t { Ingested, Derived };

class DatasetStore;

// An immutable contiguous buffer of one primitive element type. Stored
// datasets are file-backed (memory mapped); wire-decoded datasets may own a
// heap buffer instead. Contents never change after construction.
class Dataset {
 public:
  // File-backed dataset.
  Dataset(std::string name, ElemType type, std::string path,
          DatasetOrigin origin, bool prefault = false)
      : name_(std::move(name)),
        type_(type),
        path_(std::move(path)),
        origin_(origin),
        map_(path_, prefault) {
    if (map_.size() % elem_width(type_) != 0)
      throw Error(ErrorCode::BadSize,
                  name_ + ": file size " + std::to_string(map_.size()) +
                      " not a multiple of element width " +
                      std::to_string(elem_width(type_)));
    length_ = map_.size() / elem_width(type_);
  }

  // Heap-backed dataset (client-side reconstruction, tests).
  Dataset(std::string name, ElemType type, std::vector<std::byte> bytes)
      : name_(std::move(name)),
        type_(type),
        origin_(DatasetOrigin::Derived),
        owned_(std::move(bytes)) {
    if (owned_.size() % elem_width(type_) != 0)
      throw Error(ErrorCode::BadSize, name_ + ": bad buffer size");
    length_ = owned_.size() / elem_width(type_);
  }

  ~Dataset();

  Dataset(const Dataset&) = delete;
  Dataset& operator=(const Dataset&) = delete;

  const std::string& name() const { return name_; }
  ElemType type() const { return type_; }
  size_t length() const { return length_; }
  const std::string& path() const { return path_; }
  DatasetOrigin origin() const { return origin_; }

  std::span<const std::byte> bytes() const {
    const std::byte* p = path_.empty() ? owned_.data() : map_.data();
    return {p, length_ * elem_width(type_)};
  }

  template <typename T>
  std::span<const T> as() const {
    auto b = bytes();
    return {reinterpret_cast<const T*>(b.data()), length_};
  }

  Scalar at(size_t i) const {
    auto b = bytes().data();
    switch (type_) {
      case ElemType::Int32:
        return Scalar(reinterpret_cast<const int32_t*>(b)[i]);
      case ElemType::Int64:
        return Scalar(reinterpret_cast<const int64_t*>(b)[i]);
      case ElemType::Float32:
        return Scalar(reinterpret_cast<const float*>(b)[i]);
      case ElemType::Float64:
        return Scalar(reinterpret_cast<const double*>(b)[i]);
    }
    return Scalar();
  }

 private:
  friend class DatasetStore;

  std::string name_;
  ElemType type_;
  std::string path_;  // empty for heap-backed
  DatasetOrigin origin_;
  size_t length_ = 0;
  MappedFile map_;
  std::vector<std::byte> owned_;
  DatasetStore* store_ = nullptr;  // set for derived temp datasets
  bool unlink_on_destroy_ = false;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

struct StorageConfig {
  std::string storage_dir;
  std::string temp_dir;
  size_t max_resident_bytes = size_t(1) << 30;  // budget for derived datasets
  bool prefault = false;
};

enum class AdoptMode { Copy, Move };

// Incrementally fills a new derived dataset, then seals it into an immutable
// Dataset. Backed by a temp file so derived results share the file-based
// read path with stored datasets.
class DatasetBuilder {
 public:
  DatasetBuilder(DatasetBuilder&&) = default;

  void push(const Scalar& v) {
    switch (type_) {
      case ElemType::Int32: {
        int32_t x = static_cast<int32_t>(v.as_int64());
        append(&x, 4);
        break;
      }
      case ElemType::Int64: {
        int64_t x = v.as_int64();
        append(&x, 8);
        break;
      }
      case ElemType::Float32: {
        float x = static_cast<float>(v.as_double());
        append(&x, 4);
        break;
      }
      case ElemType::Float64: {
        double x = v.as_double();
        append(&x, 8);
        break;
      }
    }
    ++count_;
  }

  void push_int(int64_t v) { push(Scalar::make_int(type_, v)); }

  template <typename T>
  void push_raw(T v) {
    append(&v, sizeof(T));
    ++count_;
  }

  size_t count() const { return count_; }
  ElemType type() const { return type_; }

  DatasetPtr seal();

 private:
  friend class DatasetStore;
  DatasetBuilder(DatasetStore* store, std::string name, ElemType type,
                 std::string path)
      : store_(store), name_(std::move(name)), type_(type),
        path_(std::move(path)) {}

  void append(const void* p, size_t n) {
    const std::byte* b = static_cast<const std::byte*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  DatasetStore* store_;
  std::string name_;
  ElemType type_;
  std::string path_;
  std::vector<std::byte> buf_;
  size_t count_ = 0;
};

// Creates, registers and serves datasets as immutable file-backed buffers.
// Ingestion adopts raw binary files as-is: no parse, no per-element work.
class DatasetStore {
 public:
  explicit DatasetStore(StorageConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.storage_dir.empty()) cfg_.storage_dir = ".";
    if (cfg_.temp_dir.empty()) cfg_.temp_dir = cfg_.storage_dir;
    std::error_code ec;
    fs::create_directories(cfg_.storage_dir, ec);
    fs::create_directories(cfg_.temp_dir, ec);
    if (!fs::is_directory(cfg_.storage_dir) || !fs::is_directory(cfg_.temp_dir))
      throw Error(ErrorCode::IoError, "storage directories unavailable");
  }

  const StorageConfig& config() const { return cfg_; }

  // Adopts a raw little-endian binary file as a named dataset. The file is
  // moved (or copied byte-for-byte) into the storage directory exactly once;
  // elements are never touched individually.
  DatasetPtr create_dataset(const std::string& name, const std::string& source,
                            ElemType type, AdoptMode mode = AdoptMode::Copy) {
    std::lock_guard<std::mutex> lk(mu_);
    ensure_fresh(name);
    std::error_code ec;
    auto size = fs::file_size(source, ec);
    if (ec)
      throw Error(ErrorCode::Unreadable, source + ": " + ec.message());
    if (size % elem_width(type) != 0)
      throw Error(ErrorCode::BadSize,
                  source + ": size " + std::to_string(size) +
                      " not divisible by " + std::to_string(elem_width(type)));
    std::string dest = dataset_path(name);
    if (mode == AdoptMode::Move) {
      fs::rename(source, dest, ec);
      if (ec) {
        // cross-device move falls back to a single raw byte copy
        fs::copy_file(source, dest, fs::copy_options::overwrite_existing, ec);
        if (ec) throw Error(ErrorCode::Unreadable, source + ": " + ec.message());
        fs::remove(source, ec);
      }
    } else {
      fs::copy_file(source, dest, fs::copy_options::overwrite_existing, ec);
      if (ec) throw Error(ErrorCode::Unreadable, source + ": " + ec.message());
    }
    auto ds = std::make_shared<Dataset>(name, type, dest,
                                        DatasetOrigin::Ingested, cfg_.prefault);
    registry_[name] = ds;
    order_.push_back(name);
    return ds;
  }

  // Registers an already-present file in the storage directory (catalog load).
  DatasetPtr open_existing(const std::string& name, const std::string& path,
                           ElemType type) {
    std::lock_guard<std::mutex> lk(mu_);
    ensure_fresh(name);
    auto ds = std::make_shared<Dataset>(name, type, path,
                                        DatasetOrigin::Ingested, cfg_.prefault);
    registry_[name] = ds;
    order_.push_back(name);
    return ds;
  }

  DatasetPtr create_dataset_literal(const std::string& name, ElemType type,
                                    const std::vector<Scalar>& values) {
    if (values.empty())
      throw Error(ErrorCode::BadSize, name + ": literal dataset needs values");
    std::lock_guard<std::mutex> lk(mu_);
    ensure_fresh(name);
    std::string dest = dataset_path(name);
    write_values(dest, type, values);
    element_touches_ += values.size();
    auto ds = std::make_shared<Dataset>(name, type, dest,
                                        DatasetOrigin::Ingested, cfg_.prefault);
    registry_[name] = ds;
    order_.push_back(name);
    return ds;
  }

  DatasetPtr find(const std::string& name) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = registry_.find(name);
    return it == registry_.end() ? nullptr : it->second;
  }

  DatasetPtr require(const std::string& name) const {
    auto ds = find(name);
    if (!ds) throw Error(ErrorCode::UnknownDataset, name);
    return ds;
  }

  void drop(const std::string& name) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = registry_.find(name);
    if (it == registry_.end()) throw Error(ErrorCode::UnknownDataset, name);
    std::error_code ec;
    fs::remove(it->second->path(), ec);
    registry_.erase(it);
    order_.erase(std::find(order_.begin(), order_.end(), name));
  }

  std::vector<DatasetPtr> list() const {
    std::lock_guard<std::mutex> lk(mu_);
    std::vector<DatasetPtr> out;
    for (const auto& n : order_) out.push_back(registry_.at(n));
    return out;
  }

  // Cells [offset, offset+count) with no conversion.
  static std::span<const std::byte> read_range(const Dataset& ds,
                                               size_t offset, size_t count) {
    if (offset + count > ds.length())
      throw Error(ErrorCode::OutOfBounds,
                  ds.name() + ": range [" + std::to_string(offset) + ", " +
                      std::to_string(offset + count) + ") exceeds length " +
                      std::to_string(ds.length()));
    size_t w = elem_width(ds.type());
    return ds.bytes().subspan(offset * w, count * w);
  }

  // New derived dataset with the cells where mask is true, order preserved.
  DatasetPtr filter_dataset(const Dataset& ds, const std::vector<bool>& mask) {
    if (mask.size() != ds.length())
      throw Error(ErrorCode::LengthMismatch,
                  "mask length " + std::to_string(mask.size()) +
                      " != dataset length " + std::to_string(ds.length()));
    auto b = make_builder(ds.type());
    for (size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) b.push(ds.at(i));
    }
    element_touches_ += ds.length();
    return b.seal();
  }

  // Anonymous derived dataset builder; result lives in temp_dir and its file
  // is removed when the last reference drops.
  DatasetBuilder make_builder(ElemType type) {
    uint64_t id = next_temp_.fetch_add(1);
    std::string name = "__tmp_" + std::to_string(id);
    return DatasetBuilder(this, name, type,
                          (fs::path(cfg_.temp_dir) / (name + ".bin")).string());
  }

  DatasetPtr from_values(ElemType type, const std::vector<Scalar>& values) {
    auto b = make_builder(type);
    for (const auto& v : values) b.push(v);
    return b.seal();
  }

  uint64_t element_touches() const { return element_touches_.load(); }
  void reset_element_touches() { element_touches_ = 0; }
  size_t resident_derived_bytes() const { return derived_bytes_.load(); }

 private:
  friend class DatasetBuilder;
  friend class Dataset;

  void ensure_fresh(const std::string& name) {
    if (registry_.count(name))
      throw Error(ErrorCode::DuplicateDataset, name);
  }

  std::string dataset_path(const std::string& name) const {
    return (fs::path(cfg_.storage_dir) / (name + ".bin")).string();
  }

  static void write_values(const std::string& path, ElemType type,
                           const std::vector<Scalar>& values) {
    std::vector<std::byte> buf;
    buf.reserve(values.size() * elem_width(type));
    auto put = [&buf](const void* p, size_t n) {
      const std::byte* b = static_cast<const std::byte*>(p);
      buf.insert(buf.end(), b, b + n);
    };
    for (const auto& v : values) {
      switch (type) {
        case ElemType::Int32: {
          if (!v.is_integer() && v.as_double() != static_cast<double>(v.as_int64()))
            throw Error(ErrorCode::BadValue, "non-integral value for int32");
          int32_t x = static_cast<int32_t>(v.as_int64());
          put(&x, 4);
          break;
        }
        case ElemType::Int64: {
          if (!v.is_integer() && v.as_double() != static_cast<double>(v.as_int64()))
            throw Error(ErrorCode::BadValue, "non-integral value for int64");
          int64_t x = v.as_int64();
          put(&x, 8);
          break;
        }
        case ElemType::Float32: {
          float x = static_cast<float>(v.as_double());
          put(&x, 4);
          break;
        }
        case ElemType::Float64: {
          double x = v.as_double();
          put(&x, 8);
          break;
        }
      }
    }
    write_file(path, buf);
  }

  static void write_file(const std::string& path,
                         const std::vector<std::byte>& buf) {
    int fd = ::open(path.c_str(), O_CREAT | O_TRUNC | O_WRONLY, 0644);
    if (fd < 0) throw Error(ErrorCode::IoError, path + ": " + std::strerror(errno));
    size_t off = 0;
    while (off < buf.size()) {
      ssize_t n = ::write(fd, buf.data() + off, buf.size() - off);
      if (n <= 0) {
        ::close(fd);
        throw Error(ErrorCode::IoError, path + ": short write");
      }
      off += static_cast<size_t>(n);
    }
    ::close(fd);
  }

  DatasetPtr seal_builder(DatasetBuilder& b) {
    write_file(b.path_, b.buf_);
    size_t nbytes = b.buf_.size();
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (derived_bytes_ + nbytes > cfg_.max_resident_bytes)
        throw Error(ErrorCode::ResourceExhausted,
                    "derived dataset budget exceeded: " +
                        std::to_string(derived_bytes_ + nbytes) + " > " +
                        std::to_string(cfg_.max_resident_bytes));
      derived_bytes_ += nbytes;
    }
    auto ds = std::make_shared<Dataset>(b.name_, b.type_, b.path_,
                                        DatasetOrigin::Derived, false);
    const_cast<Dataset&>(*ds).store_ = this;
    const_cast<Dataset&>(*ds).unlink_on_destroy_ = true;
    return ds;
  }

  void release_derived(const Dataset& ds) {
    derived_bytes_ -= ds.length() * elem_width(ds.type());
    std::error_code ec;
    fs::remove(ds.path(), ec);
  }

  StorageConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::string, DatasetPtr> registry_;
  std::vector<std::string> order_;
  std::atomic<uint64_t> next_temp_{0};
  std::atomic<uint64_t> element_touches_{0};
  std::atomic<size_t> derived_bytes_{0};
};

inline Dataset::~Dataset() {
  if (unlink_on_destroy_ && store_) store_->release_derived(*this);
}

inline DatasetPtr DatasetBuilder::seal() { return store_->seal_builder(*this); }

}  // namespace savime
