#include "runtime.hpp"

#include "error.hpp"

namespace qlk {

Runtime::Runtime(Config cfg, std::shared_ptr<const GameModel> model,
                 std::shared_ptr<const QlkTables> tables)
    : cfg_(std::move(cfg)),
      model_(std::move(model)),
      tables_(std::move(tables)),
      hash_(config_hash(cfg_)) {
  if (tables_->config_hash != hash_)
    throw Error(ErrorCode::kHashMismatch, "tables were solved for a different configuration");
  human_ = std::make_unique<HumanModel>(*model_, *tables_, LatentSpace::from_solver(cfg_.solver));
}

std::filesystem::path default_tables_path(const std::filesystem::path& config_path) {
  auto p = config_path;
  p.replace_extension(".tables");
  return p;
}

std::shared_ptr<const QlkTables> ensure_tables(
    const Config& cfg, const GameModel& model, const std::filesystem::path& path, bool* cache_hit,
    const std::function<void(const SolveProgress&)>& progress) {
  const std::uint64_t h = config_hash(cfg);
  if (auto on_disk = peek_tables_hash(path); on_disk && *on_disk == h) {
    if (cache_hit) *cache_hit = true;
    return std::make_shared<QlkTables>(load_tables(model, h, path));
  }
  if (cache_hit) *cache_hit = false;
  auto tables = std::make_shared<QlkTables>(solve_qlk(model, cfg.solver, h, progress));
  if (!path.empty()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_tables(*tables, model, path);
  }
  return tables;
}

std::shared_ptr<const QlkTables> load_tables_for(const Config& cfg, const GameModel& model,
                                                 const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingTablesError("no solved tables at " + path.string() +
                             "; run `qlkplan solve --config <file>` first");
  try {
    return std::make_shared<QlkTables>(load_tables(model, config_hash(cfg), path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kHashMismatch)
      throw Error(ErrorCode::kHashMismatch,
                  std::string(e.what()) + " (run `qlkplan solve` for this config)");
    throw;
  }
}

}  // namespace qlk
