#include <gtest/gtest.h>

#include <set>
#include <string>

#include "fedfd/check.hpp"

using namespace fedfd;

TEST(CheckSuite, PristineBuildPasses) {
    const auto results = run_checks({});
    ASSERT_FALSE(results.empty());
    for (const CheckResult& r : results) EXPECT_TRUE(r.passed) << r.module << "." << r.name;
}

TEST(CheckSuite, ListsEveryModuleByName) {
    const auto results = run_checks({});
    std::set<std::string> modules;
    for (const CheckResult& r : results) modules.insert(r.module);
    for (const char* expected : {"numerics", "models", "aggregation", "distillation", "data"})
        EXPECT_TRUE(modules.count(expected)) << expected;
}

TEST(CheckSuite, InjectedLowTaylorOrderFailsOrthogonality) {
    CheckOptions opt;
    opt.taylor_order = 1;
    opt.filter = "numerics.orthogonality";
    const auto results = run_checks(opt);
    ASSERT_EQ(results.size(), 1u);
    EXPECT_FALSE(results[0].passed);
}

TEST(CheckSuite, FilterSelectsSubset) {
    CheckOptions opt;
    opt.filter = "aggregation";
    const auto results = run_checks(opt);
    ASSERT_FALSE(results.empty());
    for (const CheckResult& r : results) EXPECT_EQ(r.module, "aggregation");

    opt.filter = "no_such_module";
    EXPECT_TRUE(run_checks(opt).empty());
}
