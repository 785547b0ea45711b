#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"
#include "wrel/lrb/bank.hpp"
#include "wrel/model/network.hpp"
#include "wrel/train/config.hpp"
#include "wrel/train/pipeline.hpp"

namespace wrel::train {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  if (at + 4 > in.size()) throw ParseError("truncated checkpoint blob");
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

/// Little-endian float32 regardless of host order.
template <typename T>
void put_f32(std::string& out, std::span<const T> values) {
  out.reserve(out.size() + values.size() * 4);
  for (auto v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

template <typename T>
void get_f32(const std::string& in, std::size_t at, std::span<T> values) {
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<T>(std::bit_cast<float>(get_u32(in, at + 4 * i)));
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
std::string params_blob(const nn::ParamSet<T>& p) {
  std::string out;
  for (const auto& e : p.entries()) put_f32<T>(out, e.values);
  return out;
}

template <typename T>
void load_params_blob(const std::string& blob, nn::ParamSet<T>& p) {
  if (blob.size() != p.numel() * 4) throw ParseError("parameter blob size does not match the model layout");
  std::size_t at = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    get_f32<T>(blob, at, p[i]);
    at += p[i].size() * 4;
  }
}

inline constexpr std::array<char, 8> kBankMagic{'W', 'R', 'E', 'L', 'B', 'N', 'K', '1'};

}  // namespace detail

inline std::string checkpoint_name(Phase phase, int epoch) {
  return "stage" + std::to_string(static_cast<int>(phase)) + "-epoch" + std::to_string(epoch);
}

/// Bank blob: 8-byte magic, u32 rows, u32 p, u32 d, then rows*p*d float32.
template <typename T>
std::string bank_blob(const lrb::PromptBank<T>& bank) {
  std::string out(detail::kBankMagic.begin(), detail::kBankMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(bank.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(bank.prompts()));
  detail::put_u32(out, static_cast<std::uint32_t>(bank.dim()));
  detail::put_f32<T>(out, bank.values());
  return out;
}

template <typename T>
lrb::PromptBank<T> load_bank(const std::string& blob, const std::vector<std::string>& ids) {
  if (blob.size() < 20 || !std::equal(detail::kBankMagic.begin(), detail::kBankMagic.end(), blob.begin()))
    throw ParseError("not a prompt bank blob");
  const auto rows = detail::get_u32(blob, 8), p = detail::get_u32(blob, 12), d = detail::get_u32(blob, 16);
  if (rows != ids.size()) throw ParseError("bank blob row count does not match its index");
  lrb::PromptBank<T> bank(ids, static_cast<int>(p), static_cast<int>(d), 0, 0.0);
  if (blob.size() != 20 + static_cast<std::size_t>(rows) * p * d * 4) throw ParseError("bank blob size mismatch");
  detail::get_f32<T>(blob, 20, std::span<T>(bank.values()));
  return bank;
}

inline nlohmann::json param_index(const nn::ParamSet<float>& layout) {
  nlohmann::json idx = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : layout.entries()) {
    idx.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size();
  }
  return idx;
}

/// Writes `dir` with index.json and float32 blobs of student, teacher,
/// optimizer moments and (when present) the bank.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const TrainerState<T>& st, Mode mode) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nn::ParamSet<float> layout;
  for (const auto& e : st.student.params.entries()) layout.add(e.name, e.shape);
  nlohmann::json j;
  j["kind"] = "model";
  j["phase"] = static_cast<int>(st.phase);
  j["epoch"] = st.epoch;
  j["t"] = st.t;
  j["seed"] = st.seed;
  j["mode"] = to_string(mode);
  j["optimizer_steps"] = st.optimizer.steps();
  j["params"] = param_index(layout);
  j["digests"] = {{"student", model::param_digest(st.student.params)},
                  {"teacher", model::param_digest(st.teacher.params)}};
  detail::write_file(dir / "student.f32", detail::params_blob(st.student.params));
  detail::write_file(dir / "teacher.f32", detail::params_blob(st.teacher.params));
  const bool has_moments = st.optimizer.first_moment().same_layout(st.student.params);
  j["optimizer_state"] = has_moments;
  if (has_moments) {
    detail::write_file(dir / "adam_m.f32", detail::params_blob(st.optimizer.first_moment()));
    detail::write_file(dir / "adam_v.f32", detail::params_blob(st.optimizer.second_moment()));
  }
  if (st.bank) {
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t r = 0; r < st.bank->ids().size(); ++r) rows[st.bank->ids()[r]] = r;
    j["bank"] = {{"rows", rows}, {"prompts", st.bank->prompts()}, {"dim", st.bank->dim()}};
    detail::write_file(dir / "bank.f32", bank_blob(*st.bank));
  } else {
    j["bank"] = nullptr;
  }
  detail::write_file(dir / "index.json", j.dump(2) + "\n");
}

inline nlohmann::json read_checkpoint_index(const std::filesystem::path& dir) {
  const auto p = dir / "index.json";
  if (!std::filesystem::exists(p)) throw IoError("missing checkpoint " + dir.string());
  try {
    return nlohmann::json::parse(detail::read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

/// Restores a state written by save_checkpoint; the network layout comes from `cfg`.
template <typename T>
TrainerState<T> load_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg) {
  const auto j = read_checkpoint_index(dir);
  if (j.value("kind", "model") != "model") throw ConfigError(dir.string() + " is not a trainable checkpoint");
  TrainerState<T> st;
  st.phase = static_cast<Phase>(j.at("phase").get<int>());
  st.epoch = j.at("epoch").get<int>();
  st.t = j.at("t").get<std::int64_t>();
  st.seed = j.at("seed").get<std::uint64_t>();
  st.student = model::Network<T>(cfg.net);
  const auto& idx = j.at("params");
  if (idx.size() != st.student.params.size()) throw ParseError("checkpoint parameter count differs from the config");
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (idx[i].at("name").get<std::string>() != st.student.params.entry(i).name ||
        idx[i].at("shape").get<std::vector<std::size_t>>() != st.student.params.entry(i).shape)
      throw ParseError("checkpoint parameter '" + idx[i].at("name").get<std::string>() +
                       "' does not match the configured model");
  st.teacher = st.student;
  detail::load_params_blob(detail::read_file(dir / "student.f32"), st.student.params);
  detail::load_params_blob(detail::read_file(dir / "teacher.f32"), st.teacher.params);
  const double wd = st.phase == Phase::kStage3 ? cfg.stage3.weight_decay : cfg.stage1.weight_decay;
  st.optimizer = nn::AdamW<T>(st.student.params, {.weight_decay = wd});
  if (j.value("optimizer_state", false)) {
    detail::load_params_blob(detail::read_file(dir / "adam_m.f32"), st.optimizer.first_moment());
    detail::load_params_blob(detail::read_file(dir / "adam_v.f32"), st.optimizer.second_moment());
    st.optimizer.set_steps(j.at("optimizer_steps").get<std::int64_t>());
  }
  if (!j.at("bank").is_null()) {
    const auto& rows = j.at("bank").at("rows");
    std::vector<std::string> ids(rows.size());
    for (auto it = rows.begin(); it != rows.end(); ++it) ids.at(it.value().get<std::size_t>()) = it.key();
    st.bank = load_bank<T>(detail::read_file(dir / "bank.f32"), ids);
  }
  return st;
}

}  // namespace wrel::train
