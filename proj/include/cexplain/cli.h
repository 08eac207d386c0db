// Copyright 2026 The cexplain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The `cexplain` command line:
//
//   explain, prototypes, questionnaire build, serve, aggregate
//
// Every flag can also come from the environment variable CEXPLAIN_<FLAG>
// (upper case, dashes as underscores) or from the JSON file given by
// --config, either at top level or under the subcommand's name. A flag on
// the command line beats the environment, which beats the config file.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#ifndef CEXPLAIN_CLI_H_
#define CEXPLAIN_CLI_H_

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>

namespace cexplain {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// `args` excludes the program name.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err,
            const EnvLookup& env = process_env);

}  // namespace cexplain

#endif  // CEXPLAIN_CLI_H_
