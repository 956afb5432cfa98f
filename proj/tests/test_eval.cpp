// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "smoothfat/eval.hpp"

using namespace smoothfat;

TEST(Eval, ParseAttackList) {
    const auto list = parse_attack_list("clean, FGSM,pgd10,pgd-20", 0.1);
    ASSERT_EQ(list.size(), 3u);
    EXPECT_TRUE(list[0].fgsm);
    EXPECT_DOUBLE_EQ(list[0].step, 0.1);
    EXPECT_EQ(list[1].name, "pgd10");
    EXPECT_DOUBLE_EQ(list[1].step, 0.025);
    EXPECT_EQ(list[2].steps, 20);
    EXPECT_DOUBLE_EQ(parse_attack_list("pgd5", 0.1, 0.01)[0].step, 0.01);
    EXPECT_THROW(parse_attack_list("cw", 0.1), std::invalid_argument);
    EXPECT_THROW(parse_attack_list("pgd", 0.1), std::invalid_argument);
    EXPECT_THROW(parse_attack_list("pgd0", 0.1), std::invalid_argument);
}

TEST(Eval, CleanAccuracyMatchesManualCount) {
    const auto data = make_blobs(3, 30, 6, 0.8, 1);
    const auto spec = ModelSpec::mlp(6, {8}, 3);
    const auto params = build_model(spec, 4);
    const auto report = evaluate(spec, params, data, {}, 0.1, 1, 7);
    const auto pred = argmax_rows(predict_logits(spec, params, data.images));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
    EXPECT_EQ(report.correct.at("clean"), correct);
    EXPECT_DOUBLE_EQ(report.at("clean"), static_cast<double>(correct) / 90.0);
}

TEST(Eval, ResultsIndependentOfChunkingAndThreads) {
    const auto data = make_blobs(2, 40, 6, 0.5, 3);
    const auto spec = ModelSpec::mlp(6, {8}, 2);
    const auto params = build_model(spec, 2);
    const auto attacks = parse_attack_list("fgsm,pgd10", 0.1);
    const auto a = evaluate(spec, params, data, attacks, 0.1, 1, 250);
    const auto b = evaluate(spec, params, data, attacks, 0.1, 3, 9);
    EXPECT_EQ(a.correct, b.correct);
}

TEST(Eval, StrongerAttacksDoNotHelpMuch) {
    const auto data = make_blobs(2, 100, 6, 0.4, 5);
    const auto spec = ModelSpec::mlp(6, {16}, 2);
    const auto params = build_model(spec, 1);
    const auto r = evaluate(spec, params, data, parse_attack_list("fgsm,pgd50", 0.15), 0.15);
    EXPECT_LE(r.at("pgd50"), r.at("fgsm") + 0.02);
    EXPECT_LE(r.at("fgsm"), r.at("clean") + 1e-12);
}

TEST(Eval, AggregateModes) {
    auto report = [](double clean, double pgd) {
        EvalReport r;
        r.samples = 100;
        r.order = {"clean", "pgd10"};
        r.accuracy = {{"clean", clean}, {"pgd10", pgd}};
        r.correct = {{"clean", std::size_t(clean * 100)}, {"pgd10", std::size_t(pgd * 100)}};
        return r;
    };
    std::vector<RunEvaluation> runs{{report(0.9, 0.4), report(0.95, 0.2)}, {report(0.8, 0.5), report(0.85, 0.3)}};
    const auto mbest = aggregate(runs, AggregateMode::mbest);
    EXPECT_NEAR(mbest.at("pgd10"), 0.45, 1e-12);
    const auto mfinal = aggregate(runs, AggregateMode::mfinal);
    EXPECT_NEAR(mfinal.at("clean"), 0.9, 1e-12);
    const auto best = aggregate(runs, AggregateMode::best);
    EXPECT_NEAR(best.at("pgd10"), 0.5, 1e-12);
    EXPECT_NEAR(best.at("clean"), 0.9, 1e-12);
    EXPECT_THROW(aggregate({}, AggregateMode::best), std::invalid_argument);
}

TEST(Eval, JsonAndCsvRows) {
    EvalReport r;
    r.samples = 4;
    r.xi = 0.25;
    r.order = {"clean", "pgd10"};
    r.accuracy = {{"clean", 0.75}, {"pgd10", 0.5}};
    r.correct = {{"clean", 3}, {"pgd10", 2}};
    const auto j = to_json(r);
    EXPECT_EQ(j.at("results").size(), 2u);
    EXPECT_EQ(j.at("results")[1].at("attack"), "pgd10");
    EXPECT_EQ(j.at("results")[1].at("correct"), 2);
    EXPECT_EQ(csv_table_row("m", r), "m,0.750000,,0.500000,,");
    EXPECT_EQ(csv_table_header(), "method,clean,FGSM,PGD-10,PGD-20,PGD-50");
}
