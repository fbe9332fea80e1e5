#pragma once

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>

#include "savime/common.hpp"

namespace savime {

enum class LogLevel : int { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline LogLevel parse_log_level(const std::string& s) {
  std::string l = s;
  for (auto& c : l) c = static_cast<char>(tolower(static_cast<unsigned char>(c)));
  if (l == "debug") return LogLevel::Debug;
  if (l == "warn" || l == "warning") return LogLevel::Warn;
  if (l == "error") return LogLevel::Error;
  return LogLevel::Info;
}

// Structured single-line logger: timestamp, level, session, event.
class Logger {
 public:
  static Logger& instance() {
    static Logger logger;
    return logger;
  }

  void set_level(LogLevel level) { level_ = level; }

  void log(LogLevel level, int session, const std::string& event) {
    if (static_cast<int>(level) < static_cast<int>(level_)) return;
    char ts[32];
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", &tm);
    static const char* names[] = {"DEBUG", "INFO", "WARN", "ERROR"};
    std::lock_guard<std::mutex> lk(mu_);
    std::cerr << ts << " " << names[static_cast<int>(level)];
    if (session >= 0) std::cerr << " session=" << session;
    std::cerr << " " << event << "\n";
  }

 private:
  LogLevel level_ = LogLevel::Info;
  std::mutex mu_;
};

inline void log_debug(const std::string& e, int session = -1) {
  Logger::instance().log(LogLevel::Debug, session, e);
}
inline void log_info(const std::string& e, int session = -1) {
  Logger::instance().log(LogLevel::Info, session, e);
}
inline void log_warn(const std::string& e, int session = -1) {
  Logger::instance().log(LogLevel::Warn, session, e);
}
inline void log_error(const std::string& e, int session = -1) {
  Logger::instance().log(LogLevel::Error, session, e);
}

// Server/CLI configuration: a key=value file plus environment overrides
// (SAVIME_CONFIG selects the file, SAVIME_STORAGE_DIR overrides storage_dir).
struct Config {
  std::string storage_dir = "savime_data";
  std::string temp_dir;  // defaults to storage_dir/tmp
  size_t max_resident_bytes = size_t(2) << 30;
  bool prefault = false;
  std::string catalog_path;  // defaults to storage_dir/catalog.json
  std::string host = "127.0.0.1";
  int port = 4711;
  unsigned threads = 0;  // operator parallel grain; 0 = hardware cores
  std::string log_level = "info";
  std::string post_export_hook;

  std::string effective_temp_dir() const {
    return temp_dir.empty() ? storage_dir + "/tmp" : temp_dir;
  }
  std::string effective_catalog() const {
    return catalog_path.empty() ? storage_dir + "/catalog.json" : catalog_path;
  }
};

inline void apply_config_line(Config& cfg, const std::string& key,
                              const std::string& value) {
  if (key == "storage_dir") cfg.storage_dir = value;
  else if (key == "temp_dir") cfg.temp_dir = value;
  else if (key == "max_resident_bytes") cfg.max_resident_bytes = std::stoull(value);
  else if (key == "prefault") cfg.prefault = value == "true" || value == "1";
  else if (key == "catalog") cfg.catalog_path = value;
  else if (key == "host") cfg.host = value;
  else if (key == "port") cfg.port = std::stoi(value);
  else if (key == "threads") cfg.threads = static_cast<unsigned>(std::stoul(value));
  else if (key == "log_level") cfg.log_level = value;
  else if (key == "post_export_hook") cfg.post_export_hook = value;
  else
    throw Error(ErrorCode::BadValue, "unknown configuration key " + key);
}

inline Config load_config(const std::string& explicit_path = "") {
  Config cfg;
  std::string path = explicit_path;
  if (path.empty()) {
    if (const char* env = std::getenv("SAVIME_CONFIG")) path = env;
  }
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::Unreadable, path);
    std::string line;
    while (std::getline(f, line)) {
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::BadValue, "bad config line: " + line);
      apply_config_line(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
  }
  if (const char* env = std::getenv("SAVIME_STORAGE_DIR")) cfg.storage_dir = env;
  return cfg;
}

}  // namespace savime
