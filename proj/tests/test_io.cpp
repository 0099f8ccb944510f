#include <gtest/gtest.h>

#include <cstring>
#include <numbers>
#include <sstream>
#include <string>

#include "zvlab/families.hpp"
#include "zvlab/gridfn_io.hpp"

using namespace zvlab;

namespace {

GridFn ramp(const Grid& g, Rank rank, bool timed) {
    const int nc = component_count(rank, g.dim);
    std::vector<double> v((timed ? g.nt + 1 : 1) * g.points() * nc);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 3.0 / (i + 1.0);
    return GridFn(g, rank, timed, std::move(v));
}

std::string header(const std::string& blob) { return blob.substr(0, blob.find('\n')); }

} // namespace

TEST(GridfnFormat, RoundTripIsExact) {
    const Grid g = build_grid(2, 2.5, 8, 0.75, 3, 0.5);
    for (Rank r : {Rank::scalar, Rank::vector, Rank::matrix})
        for (bool timed : {false, true}) {
            const GridFn f = ramp(g, r, timed);
            std::stringstream ss;
            write_gridfn(ss, f);
            const GridFn back = read_gridfn(ss);
            EXPECT_EQ(back.rank(), r);
            EXPECT_EQ(back.time_dependent(), timed);
            EXPECT_TRUE(back.grid().same_lattice(g));
            EXPECT_EQ(back.grid().horizon, 0.75);
            ASSERT_EQ(back.values().size(), f.values().size());
            EXPECT_EQ(std::memcmp(back.values().data(), f.values().data(), f.values().size() * sizeof(double)), 0);
        }
}

TEST(GridfnFormat, HeaderAndByteLayout) {
    const Grid g = build_grid(2, std::numbers::pi, 8, 1.0, 2);
    std::stringstream ss;
    write_gridfn(ss, GridFn::constant(g, 1.5));
    const std::string blob = ss.str();
    EXPECT_EQ(header(blob), "gridfn v1 2 8 0 scalar L=3.1415926535897931 T=1 shift=0");
    ASSERT_EQ(blob.size(), header(blob).size() + 1 + 64 * 8);
    // 1.5 = 0x3FF8000000000000, little-endian.
    const unsigned char want[8] = {0, 0, 0, 0, 0, 0, 0xF8, 0x3F};
    EXPECT_EQ(std::memcmp(blob.data() + header(blob).size() + 1, want, 8), 0);

    std::stringstream timed;
    write_gridfn(timed, ramp(g, Rank::vector, true));
    EXPECT_EQ(header(timed.str()).substr(0, 24), "gridfn v1 2 8 2 vector L");
}

TEST(GridfnFormat, OptionalFieldsDefault) {
    std::string blob = "gridfn v1 1 8 0 scalar\n";
    const double v[8] = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    blob.append(reinterpret_cast<const char*>(v), sizeof v);
    std::istringstream is(blob);
    const GridFn f = read_gridfn(is);
    EXPECT_EQ(f.grid().half_width, std::numbers::pi);
    EXPECT_EQ(f.grid().horizon, 1.0);
    EXPECT_EQ(f.grid().shift, 0.0);
    EXPECT_EQ(f.values()[1], 2.0);
}

TEST(GridfnFormat, MalformedInputThrows) {
    std::istringstream bad("gridfm v1 1 8 0 scalar\n");
    EXPECT_THROW(read_gridfn(bad), InvalidParameter);
    std::istringstream unknown("gridfn v1 1 8 0 scalar Q=3\n");
    EXPECT_THROW(read_gridfn(unknown), InvalidParameter);
    std::string blob = "gridfn v1 1 8 0 scalar\n";
    blob.append(7 * 8, '\0');
    std::istringstream short_data(blob);
    EXPECT_THROW(read_gridfn(short_data), InvalidParameter);
    std::istringstream empty("");
    EXPECT_THROW(read_gridfn(empty), InvalidParameter);
}

TEST(PathsFormat, RoundTripWithFlows) {
    SimConfig c;
    c.x0 = {0.1, 0.2};
    c.nt = 8;
    c.paths = 5;
    c.seed = 99;
    c.with_flow = true;
    const PathEnsemble ens = simulate(make_model(Family::B, 1), c);
    std::stringstream ss;
    write_paths(ss, ens);
    EXPECT_EQ(header(ss.str()), "paths v1 2 8 5 dt=0.125 t_start=0 flow=1 seed=99");
    const PathDump p = read_paths(ss);
    EXPECT_EQ(p.d, 2);
    EXPECT_EQ(p.nt, 8);
    EXPECT_EQ(p.paths, 5u);
    EXPECT_EQ(p.dt, 0.125);
    EXPECT_EQ(p.seed, 99u);
    EXPECT_TRUE(std::equal(p.states.begin(), p.states.end(), ens.states().begin(), ens.states().end()));
    EXPECT_TRUE(std::equal(p.flows.begin(), p.flows.end(), ens.flows().begin(), ens.flows().end()));
}
