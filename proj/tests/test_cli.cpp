// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome run_cli(const std::string& args) {
    const std::string cmd = std::string(BKV_CLI_PATH) + " " + args + " 2>/dev/null";
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) {
        return o;
    }
    std::array<char, 4096> buf{};
    std::size_t got = 0;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        o.out.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string temp(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("bkv_cli_" + name)).string();
}

const std::string kContext = "--text \"alpha beta gamma delta epsilon zeta eta theta iota kappa\"";

} // namespace

TEST(Cli, BenchIsByteIdenticalAcrossRuns) {
    for (const std::string mode : {"acre", "full", "streaming"}) {
        const std::string args = "bench --seed 3 --l 4 --eta 16 --max-new 4 --query \"what\" --mode " + mode + " " + kContext;
        const auto a = run_cli(args);
        const auto b = run_cli(args);
        EXPECT_EQ(a.code, 0) << mode;
        EXPECT_FALSE(a.out.empty());
        EXPECT_EQ(a.out, b.out) << mode;
    }
}

TEST(Cli, SeedChangesAnswer) {
    const std::string args = "bench --l 4 --max-new 6 --query \"what\" " + kContext;
    const auto a = nlohmann::json::parse(run_cli(args + " --seed 1").out);
    const auto b = nlohmann::json::parse(run_cli(args + " --seed 2").out);
    EXPECT_NE(a["answer"], b["answer"]);
}

TEST(Cli, PrefillThenQueryMatchesBench) {
    const auto cache = temp("cache.ackv");
    const auto pre = run_cli("prefill --seed 5 --l 4 " + kContext + " --cache-out " + cache);
    ASSERT_EQ(pre.code, 0);
    const auto q = run_cli("query --seed 5 --l 4 --eta 16 --max-new 5 --query \"who\" --cache-in " + cache);
    ASSERT_EQ(q.code, 0);
    const auto bench = run_cli("bench --seed 5 --l 4 --eta 16 --max-new 5 --query \"who\" " + kContext);
    ASSERT_EQ(bench.code, 0);
    const auto jq = nlohmann::json::parse(q.out);
    const auto jb = nlohmann::json::parse(bench.out);
    EXPECT_EQ(jq["answer"], jb["answer"]);
    EXPECT_EQ(jq["m"], jb["m"]);
    EXPECT_EQ(jq["refill_entries"], jb["refill_entries"]);
    std::filesystem::remove(cache);
}

TEST(Cli, MetricsOutFile) {
    const auto path = temp("metrics.jsonl");
    std::filesystem::remove(path);
    const auto r = run_cli("bench --seed 1 --l 4 --max-new 2 --query q " + kContext + " --metrics-out " + path);
    EXPECT_EQ(r.code, 0);
    EXPECT_TRUE(std::filesystem::exists(path));
    EXPECT_GT(std::filesystem::file_size(path), 0u);
    std::filesystem::remove(path);
}

TEST(Cli, CapacityErrorExitsTwo) {
    EXPECT_EQ(run_cli("bench --mode full --cap 10 --query q " + kContext).code, 2);
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run_cli("bench --mode dense --query q " + kContext).code, 1);
    EXPECT_EQ(run_cli("bench --query q --input /nonexistent/file").code, 1);
    EXPECT_EQ(run_cli("bench --query q --text \"\"").code, 1);
    EXPECT_EQ(run_cli("sweep --param k --values 1,2 --query q " + kContext).code, 1);
    EXPECT_EQ(run_cli("nosuchcommand").code, 1);
    EXPECT_EQ(run_cli("query --query q --cache-in /nonexistent/cache").code, 1);
}

TEST(Cli, CorruptCacheExitsOne) {
    const auto cache = temp("corrupt.ackv");
    ASSERT_EQ(run_cli("prefill --l 4 " + kContext + " --cache-out " + cache).code, 0);
    {
        FILE* f = std::fopen(cache.c_str(), "r+b");
        ASSERT_NE(f, nullptr);
        std::fseek(f, 60, SEEK_SET);
        std::fputc(0x5a, f);
        std::fclose(f);
    }
    EXPECT_EQ(run_cli("query --query q --cache-in " + cache).code, 1);
    std::filesystem::remove(cache);
}

TEST(Cli, SweepPrintsRows) {
    const auto r = run_cli("sweep --param l --values 4,8,16 --max-new 1 --query q " + kContext);
    EXPECT_EQ(r.code, 0);
    std::size_t lines = 0;
    for (char c : r.out) {
        lines += c == '\n' ? 1 : 0;
    }
    EXPECT_GE(lines, 3u);
}

TEST(Cli, TrainWritesLoadableCheckpoint) {
    const auto model = temp("model.bin");
    const auto r = run_cli("train --stage 1 --steps 2 --model-out " + model);
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(run_cli("bench --max-new 1 --query q --model " + model + " " + kContext).code, 0);
    std::filesystem::remove(model);
}
