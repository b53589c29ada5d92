#include <catch_amalgamated.hpp>

#include <sstream>

#include "cepa/csv.hpp"

using cepa::csv::PanelFile;
using cepa::csv::read_panel;

namespace {

PanelFile parse(const std::string& text) {
    std::istringstream in(text);
    return read_panel(in);
}

cepa::ErrorKind kind_of(const std::string& text) {
    try {
        parse(text);
    } catch (const cepa::Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return cepa::ErrorKind::internal;
}

}  // namespace

TEST_CASE("long format with losses and a covariate", "[csv]") {
    const auto f = parse(
        "unit,time,loss1,loss2,x\n"
        "b,10,1.5,0.5,7\n"
        "a,2,3,1,8\n"
        "a,10,2,2,9\n"
        "b,2,0,1,6\n");
    REQUIRE(f.mode == PanelFile::Mode::losses);
    CHECK(f.units == std::vector<std::string>{"b", "a"});
    CHECK(f.times == std::vector<std::string>{"2", "10"});  // numeric order
    CHECK(f.loss1(0, 1) == 1.5);
    CHECK(f.loss2(1, 0) == 1.0);
    REQUIRE(f.covariate_names == std::vector<std::string>{"x"});
    CHECK(f.covariates[0](1, 1) == 9.0);

    const auto z = cepa::csv::to_loss_panel(f, {}, 1);
    CHECK(z.n() == 2);
    CHECK(z.t() == 2);
    CHECK(z(0, 0, 0) == -1.0);
    CHECK(z(1, 0, 0) == 2.0);

    const auto zc = cepa::csv::to_loss_panel(f, {"x"}, 1);
    CHECK(zc.p() == 2);
    CHECK(zc.t() == 1);
    CHECK(zc(0, 0, 1) == 6.0 * 1.0);  // x at time 2 times dl at time 10
}

TEST_CASE("moment columns and cluster labels", "[csv]") {
    const auto f = parse(
        "unit,time,z1,z2,cluster\n"
        "u1,t1,1,2,A\n"
        "u1,t2,3,4,A\n"
        "u2,t1,5,6,B\n"
        "u2,t2,7,8,B\n");
    REQUIRE(f.mode == PanelFile::Mode::moments);
    REQUIRE(f.cluster_labels);
    CHECK(*f.cluster_labels == std::vector<std::string>{"A", "B"});
    const auto z = cepa::csv::to_loss_panel(f, {}, 1);
    CHECK(z.p() == 2);
    CHECK(z(1, 1, 0) == 7.0);
    CHECK_THROWS_AS(cepa::csv::to_loss_panel(f, {"x"}, 1), cepa::Error);
}

TEST_CASE("malformed input is rejected as input errors", "[csv]") {
    using K = cepa::ErrorKind;
    CHECK(kind_of("") == K::input);
    CHECK(kind_of("unit,loss1,loss2\nа,1,2\n") == K::input);
    CHECK(kind_of("unit,time,loss1\n1,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\na,1,1,x\nb,1,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\na,1,1,nan\nb,1,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\na,1,1,1\na,1,1,1\nb,1,1,1\nb,1,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\na,1,1,1\na,2,1,1\nb,1,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2\na,1,1\n") == K::input);
    CHECK(kind_of("unit,time,loss1,loss2,cluster\na,1,1,1,A\na,2,1,1,B\nb,1,1,1,A\nb,2,1,1,A\n") == K::input);
}

TEST_CASE("round trip through write_loss_panel", "[csv]") {
    Eigen::MatrixXd dl(3, 4);
    dl << 0.1, -2.5, 1e-300, 3.0, 1.0 / 3.0, 2.0 / 7.0, -1e10, 0.0, 5, 6, 7, 8;
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(3, 4, 0.7);
    const cepa::LossDifferentialPanel panel(dl);
    const std::vector<int> clusters{0, 1, 1};
    std::ostringstream out;
    cepa::csv::write_loss_panel(out, panel, {{"x", x}}, &clusters);
    const auto f = parse(out.str());
    CHECK(f.loss1 == dl);  // shortest round-trip formatting is exact
    CHECK(f.loss2.isZero(0.0));
    CHECK(f.covariates[0] == x);
    CHECK(*f.cluster_labels == std::vector<std::string>{"1", "2", "2"});
}

TEST_CASE("quoted fields and CRLF", "[csv]") {
    const auto f = parse("unit,time,loss1,loss2\r\n\"a,1\",1,1,0\r\n\"a,1\",2,2,0\r\nb,1,3,0\r\nb,2,4,0\r\n");
    CHECK(f.units[0] == "a,1");
    CHECK(f.loss1(1, 1) == 4.0);
}
