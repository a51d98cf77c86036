// Copyright 2026 The PARPO Toolkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Subcommands of the `parpo` tool. Each command writes its artifacts into
// the output directory with atomic renames and returns a process exit code:
// 0 success, 1 runtime failure (divergence, failed check), 2 usage error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "parpo_cli/config.hpp"

namespace parpo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Artifacts: world.csv, trace.csv, resolved_config.json.
int cmd_simulate(const RunConfig& cfg, std::ostream& out);

/// Artifacts: compare.csv, compare.json, resolved_config.json.
int cmd_compare(const RunConfig& cfg, std::ostream& out);

/// Artifacts: bounds.csv, resolved_config.json. Exit 1 when any check fails.
int cmd_verify_bounds(const RunConfig& cfg, std::ostream& out);

/// Artifacts: rm_trace.csv, reward_model.txt, reward_stats.txt,
/// resolved_config.json.
int cmd_train_rm(const RunConfig& cfg, std::ostream& out);

/// Ingests node/embedding/edge records into <out_dir>/graph.json.
int cmd_graph_build(const std::filesystem::path& records,
                    const std::filesystem::path& out_dir, std::ostream& out);

/// Ranked skills with the per-factor breakdown. Also writes query.csv when
/// `out_dir` is non-empty.
int cmd_graph_query(const std::filesystem::path& graph_file,
                    const std::string& user, const std::vector<double>& query,
                    const graph::RetrievalConfig& retrieval,
                    const std::filesystem::path& out_dir, std::ostream& out);

/// Levels and modularity, then the selected-level community of every node.
/// Also writes communities.csv when `out_dir` is non-empty.
int cmd_graph_communities(const std::filesystem::path& graph_file,
                          const std::filesystem::path& out_dir, std::ostream& out);

/// Parses argv, dispatches, and maps exceptions to exit codes. Messages go
/// to `err`, reports to `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace parpo::cli
