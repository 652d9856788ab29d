// Adam optimizer: staircase lr decay pins, zero-grad no-op, convex descent,
// and the non-finite-gradient diagnostic.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "trifuse/adam.hpp"

using namespace trifuse;

namespace {

ParamBankT<double> single_param(double value) {
    ParamBankT<double> bank;
    TensorT<double> t(1, 1, 1, 1);
    t.data[0] = value;
    bank.entries["w"] = {std::move(t), true};
    return bank;
}

}  // namespace

TEST_CASE("effective lr follows the 0.8-every-5000 staircase") {
    AdamConfig cfg;
    cfg.lr = 1e-4;
    AdamT<double> adam(cfg);
    ParamBankT<double> bank = single_param(0.0);
    TensorT<double> g(1, 1, 1, 1);
    g.data[0] = 0.0;
    std::map<std::string, const TensorT<double>*> grads{{"w", &g}};

    CHECK(adam.effective_lr() == doctest::Approx(1e-4).epsilon(1e-12));
    for (int i = 0; i < 5000; ++i) adam.step(bank, grads);
    CHECK(adam.step_count() == 5000);
    CHECK(adam.effective_lr() == doctest::Approx(8e-5).epsilon(1e-12));
    for (int i = 0; i < 5000; ++i) adam.step(bank, grads);
    CHECK(adam.effective_lr() == doctest::Approx(6.4e-5).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves parameters bit-identical") {
    AdamConfig cfg;
    AdamT<double> adam(cfg);
    ParamBankT<double> bank = single_param(1.234567891234);
    const double before = bank.entries.at("w").value.data[0];

    SUBCASE("explicit zero tensor") {
        TensorT<double> g(1, 1, 1, 1);
        std::map<std::string, const TensorT<double>*> grads{{"w", &g}};
        for (int i = 0; i < 10; ++i) adam.step(bank, grads);
        CHECK(bank.entries.at("w").value.data[0] == before);
    }
    SUBCASE("missing name means zero gradient") {
        std::map<std::string, const TensorT<double>*> grads;
        for (int i = 0; i < 10; ++i) adam.step(bank, grads);
        CHECK(bank.entries.at("w").value.data[0] == before);
    }
}

TEST_CASE("single-parameter quadratic descends monotonically after warmup") {
    // Adam's per-step movement is ~lr while the gradient sign is constant;
    // lr * 200 < |start - minimum| guarantees the iterate never crosses the
    // minimum, so the loss decreases strictly once momentum has built up.
    AdamConfig cfg;
    cfg.lr = 5e-3;
    AdamT<double> adam(cfg);
    ParamBankT<double> bank = single_param(5.0);

    auto loss_of = [](double w) { return (w - 3.0) * (w - 3.0); };
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step) {
        const double w = bank.entries.at("w").value.data[0];
        losses.push_back(loss_of(w));
        TensorT<double> g(1, 1, 1, 1);
        g.data[0] = 2.0 * (w - 3.0);
        std::map<std::string, const TensorT<double>*> grads{{"w", &g}};
        adam.step(bank, grads);
    }
    losses.push_back(loss_of(bank.entries.at("w").value.data[0]));
    for (size_t i = 5; i + 1 < losses.size(); ++i) {
        CAPTURE(i);
        CHECK(losses[i + 1] < losses[i]);
    }
    CHECK(losses.back() < losses.front() / 2.0);
}

TEST_CASE("non-finite gradient aborts with the parameter name") {
    AdamT<double> adam(AdamConfig{});
    ParamBankT<double> bank = single_param(0.0);
    TensorT<double> g(1, 1, 1, 1);
    g.data[0] = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, const TensorT<double>*> grads{{"w", &g}};
    try {
        adam.step(bank, grads);
        FAIL("expected a runtime error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
}

TEST_CASE("gradient shape mismatch is rejected") {
    AdamT<double> adam(AdamConfig{});
    ParamBankT<double> bank = single_param(0.0);
    TensorT<double> g(1, 1, 1, 2);
    std::map<std::string, const TensorT<double>*> grads{{"w", &g}};
    CHECK_THROWS(adam.step(bank, grads));
}

TEST_CASE("invalid optimizer configs are rejected") {
    AdamConfig bad_lr;
    bad_lr.lr = 0.0;
    CHECK_THROWS(AdamT<double>(bad_lr));
    AdamConfig bad_decay;
    bad_decay.decay_every = 0;
    CHECK_THROWS(AdamT<double>(bad_decay));
}
