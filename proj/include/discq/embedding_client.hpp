#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "common.hpp"
#include "encoder.hpp"

namespace discq {

// Optional learned-feature backend: a tiny HTTP client for a sentence
// embedding service, with a per-sentence disk cache so repeated corpora never
// re-fetch. The hashed TF-IDF encoder remains the default; this exists so a
// dense encoder can be swapped in without touching the pipeline.

struct EmbeddingConfig {
  std::string endpoint = "http://127.0.0.1:8747/embed";
  std::string cache_dir;  // empty disables the cache
  int timeout_seconds = 10;
  int batch_size = 64;

  void validate() const {
    if (endpoint.find("http://") != 0 && endpoint.find("https://") != 0)
      throw ConfigError("embedding endpoint must be an http(s) URL");
    if (timeout_seconds < 1) throw ConfigError("embedding timeout must be >= 1s");
    if (batch_size < 1) throw ConfigError("embedding batch size must be >= 1");
  }
};

namespace detail {

// 128-bit content key: two independent FNV streams over the same bytes.
inline std::string embedding_cache_key(std::string_view text) {
  uint64_t h1 = fnv1a64(text);
  uint64_t h2 = fnv1a64(text, mix64(kFnvOffset));
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                static_cast<unsigned long long>(h1),
                static_cast<unsigned long long>(h2));
  return buf;
}

inline void write_le_f32(std::string& out, float v) {
  uint32_t u = std::bit_cast<uint32_t>(v);
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline std::optional<std::vector<float>> read_cached_vector(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % 4 != 0) return std::nullopt;
  std::vector<float> v(bytes.size() / 4);
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t u = static_cast<uint8_t>(bytes[4 * i]) |
                 static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 1])) << 8 |
                 static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 2])) << 16 |
                 static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + 3])) << 24;
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

}  // namespace detail

class EmbeddingClient {
 public:
  explicit EmbeddingClient(EmbeddingConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    size_t scheme = cfg_.endpoint.find("://") + 3;
    size_t slash = cfg_.endpoint.find('/', scheme);
    if (slash == std::string::npos) {
      base_ = cfg_.endpoint;
      path_ = "/";
    } else {
      base_ = cfg_.endpoint.substr(0, slash);
      path_ = cfg_.endpoint.substr(slash);
    }
  }

  // Returns one vector per input text, in input order. Cached texts are
  // served from disk; the rest are fetched in batches. Any transport failure
  // or malformed reply raises; results are never silently padded.
  std::vector<std::vector<float>> fetch(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out(texts.size());
    std::vector<size_t> misses;
    bool caching = !cfg_.cache_dir.empty();
    if (caching) std::filesystem::create_directories(cfg_.cache_dir);
    for (size_t i = 0; i < texts.size(); ++i) {
      if (caching) {
        auto cached = detail::read_cached_vector(cache_path(texts[i]));
        if (cached) {
          out[i] = std::move(*cached);
          continue;
        }
      }
      misses.push_back(i);
    }

    for (size_t start = 0; start < misses.size();
         start += static_cast<size_t>(cfg_.batch_size)) {
      size_t stop = std::min(misses.size(),
                             start + static_cast<size_t>(cfg_.batch_size));
      nlohmann::json req;
      req["texts"] = nlohmann::json::array();
      for (size_t b = start; b < stop; ++b)
        req["texts"].push_back(texts[misses[b]]);
      nlohmann::json reply = post_batch(req, stop - start);
      for (size_t b = start; b < stop; ++b) {
        const nlohmann::json& jv = reply["vectors"][b - start];
        if (!jv.is_array() || jv.empty())
          throw ValidationError("embedding service returned an empty vector");
        std::vector<float> v;
        v.reserve(jv.size());
        for (const nlohmann::json& x : jv) {
          if (!x.is_number())
            throw ValidationError("embedding service returned a non-numeric value");
          v.push_back(x.get<float>());
        }
        size_t idx = misses[b];
        if (caching) write_cache(texts[idx], v);
        out[idx] = std::move(v);
      }
    }

    size_t dim = 0;
    for (const auto& v : out) {
      if (dim == 0) dim = v.size();
      if (v.size() != dim)
        throw ValidationError("embedding dimension mismatch across sentences");
    }
    return out;
  }

  std::filesystem::path cache_path(std::string_view text) const {
    return std::filesystem::path(cfg_.cache_dir) /
           (detail::embedding_cache_key(text) + ".vec");
  }

 private:
  nlohmann::json post_batch(const nlohmann::json& req, size_t expected) {
    httplib::Client cli(base_);
    cli.set_connection_timeout(cfg_.timeout_seconds, 0);
    cli.set_read_timeout(cfg_.timeout_seconds, 0);
    cli.set_write_timeout(cfg_.timeout_seconds, 0);
    httplib::Result res = cli.Post(path_, req.dump(), "application/json");
    if (!res)
      throw NetworkError("embedding request failed: " +
                         httplib::to_string(res.error()));
    if (res->status != 200)
      throw NetworkError("embedding service returned HTTP " +
                         std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("embedding reply is not valid JSON: ") +
                            e.what());
    }
    if (!reply.is_object() || !reply.contains("vectors") ||
        !reply["vectors"].is_array())
      throw ValidationError("embedding reply missing 'vectors' array");
    if (reply["vectors"].size() != expected)
      throw ValidationError("embedding reply length mismatch: sent " +
                            std::to_string(expected) + ", got " +
                            std::to_string(reply["vectors"].size()));
    return reply;
  }

  void write_cache(std::string_view text, const std::vector<float>& v) const {
    std::string bytes;
    bytes.reserve(v.size() * 4);
    for (float x : v) detail::write_le_f32(bytes, x);
    std::filesystem::path file = cache_path(text);
    std::filesystem::path tmp = file;
    tmp += ".tmp";
    {
      std::ofstream outf(tmp, std::ios::binary | std::ios::trunc);
      if (!outf) throw IoError("cannot write embedding cache file " + tmp.string());
      outf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, file);
  }

  EmbeddingConfig cfg_;
  std::string base_;
  std::string path_;
};

// Bridges dense embeddings into the sparse pipeline representation so the
// linear models can consume either encoder.
inline FeatureVector dense_to_features(const std::vector<float>& v) {
  FeatureVector fv;
  fv.width = static_cast<uint32_t>(v.size());
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0f)
      fv.entries.push_back({static_cast<uint32_t>(i), v[i]});
  return fv;
}

}  // namespace discq
