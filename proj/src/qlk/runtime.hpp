#pragma once

#include <filesystem>
#include <functional>
#include <memory>

#include "belief.hpp"
#include "config.hpp"
#include "game_model.hpp"
#include "qlk_solver.hpp"

namespace qlk {

// Everything an episode needs, bundled: parsed config, game model, solved
// tables and the human model over Theta. Immutable once built.
class Runtime {
 public:
  Runtime(Config cfg, std::shared_ptr<const GameModel> model,
          std::shared_ptr<const QlkTables> tables);

  const Config& config() const { return cfg_; }
  const GameModel& model() const { return *model_; }
  const QlkTables& tables() const { return *tables_; }
  const HumanModel& human_model() const { return *human_; }
  std::uint64_t hash() const { return hash_; }

 private:
  Config cfg_;
  std::shared_ptr<const GameModel> model_;
  std::shared_ptr<const QlkTables> tables_;
  std::unique_ptr<HumanModel> human_;
  std::uint64_t hash_;
};

// <config stem>.tables next to the config file.
std::filesystem::path default_tables_path(const std::filesystem::path& config_path);

// Loads tables when the file exists with a matching hash, otherwise
// solves and writes them.
std::shared_ptr<const QlkTables> ensure_tables(
    const Config& cfg, const GameModel& model, const std::filesystem::path& path,
    bool* cache_hit = nullptr,
    const std::function<void(const SolveProgress&)>& progress = {});

// Loads tables; throws MissingTablesError naming the solve step when absent.
std::shared_ptr<const QlkTables> load_tables_for(const Config& cfg, const GameModel& model,
                                                 const std::filesystem::path& path);

}  // namespace qlk
