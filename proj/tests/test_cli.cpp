// Copyright 2026 The PatchForge Authors
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

// Exit-code and effective-config contracts of the command-line tool; the
// binary path comes from the build system.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef PATCHFORGE_CLI_PATH
#define PATCHFORGE_CLI_PATH "patchforge"
#endif

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(PATCHFORGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("cli: help exits 0") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("attack --help") == 0);
}

TEST_CASE("cli: usage errors exit 1") {
    CHECK(run_cli("--definitely-not-a-flag") == 1);
    CHECK(run_cli("attack --no-such-flag 3") == 1);
    CHECK(run_cli("make-chessboard --rows notanumber") == 1);
}

TEST_CASE("cli: targeted attack without a target exits 1 with MissingTarget") {
    const fs::path dir = fs::temp_directory_path() / "pf_cli_mt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cmd = std::string(PATCHFORGE_CLI_PATH) +
                            " attack --workspace " + dir.string() +
                            " --mode targeted --target-class none --out out 2> " +
                            (dir / "err.txt").string();
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
    CHECK(slurp(dir / "err.txt").find("MissingTarget") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: runtime errors exit 2") {
    const fs::path dir = fs::temp_directory_path() / "pf_cli_rt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    // evaluate against a missing model file is a runtime failure
    CHECK(run_cli("evaluate --workspace " + dir.string() + " --model nope.pfck") == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli: make-chessboard writes its image and the effective config") {
    const fs::path dir = fs::temp_directory_path() / "pf_cli_board";
    fs::remove_all(dir);
    fs::create_directories(dir);
    CHECK(run_cli("make-chessboard --workspace " + dir.string() +
                  " --rows 2 --cols 3 --cell-px 5 --border-px 0 --out board") == 0);
    CHECK(fs::exists(dir / "board" / "chessboard.png"));
    const std::string config = slurp(dir / "board" / "effective-config.txt");
    CHECK(config.find("rows = 2  # cli") != std::string::npos);
    CHECK(config.find("border-px = 0  # cli") != std::string::npos);
    CHECK(config.find("cell-px = 5  # cli") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: config file values apply under cli precedence") {
    const fs::path dir = fs::temp_directory_path() / "pf_cli_cfg";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << "rows = 7\ncols = 4\n";
    CHECK(run_cli("make-chessboard --workspace " + dir.string() + " --config " +
                  (dir / "run.cfg").string() + " --rows 2 --out board") == 0);
    const std::string config = slurp(dir / "board" / "effective-config.txt");
    CHECK(config.find("rows = 2  # cli") != std::string::npos);         // flag wins
    CHECK(config.find("cols = 4  # config-file") != std::string::npos); // file applies
    CHECK(config.find("cell-px = 20  # default") != std::string::npos);

    // unknown keys are rejected
    std::ofstream(dir / "bad.cfg") << "no-such-key = 1\n";
    CHECK(run_cli("make-chessboard --workspace " + dir.string() + " --config " +
                  (dir / "bad.cfg").string() + " --out board2") == 1);
    fs::remove_all(dir);
}
