#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "xtom/xtom.hpp"

namespace fixture {

inline std::string data(const std::string& name) { return std::string(XTOM_TEST_DATA) + "/" + name; }

inline const xtom::AogGrammar& body() {
  static const xtom::AogGrammar g = xtom::load_grammar_file(data("lsp_body.aog"));
  return g;
}

inline const std::vector<xtom::Task>& tasks() {
  static const std::vector<xtom::Task> t = xtom::load_tasks(xtom::detail::read_file(data("tasks.txt")), body());
  return t;
}

inline const xtom::Task& action() { return tasks().front(); }

inline xtom::World world(std::size_t scenes = 20, std::uint64_t seed = 11) {
  return xtom::World{body(), tasks(), xtom::generate_scenes(body(), scenes, seed, action().labels),
                     xtom::LikelihoodTables(body().hash())};
}

/// Random untrained policy for the fixture grammar.
inline xtom::Policy policy(const xtom::World& w, std::uint64_t seed = 3, std::size_t hidden = 8) {
  return xtom::Policy{xtom::init_params(xtom::Engine::dims_for(w, w.task("action"), hidden), seed), false};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("xtom-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture

#define EXPECT_XTOM_ERROR(stmt, code_)                                    \
  do {                                                                    \
    try {                                                                 \
      stmt;                                                               \
      ADD_FAILURE() << "expected " << xtom::code_name(code_);             \
    } catch (const xtom::Error& e) {                                      \
      EXPECT_EQ(e.code(), code_) << e.what();                             \
    }                                                                     \
  } while (0)
