#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "fixtures.hpp"
#include "simlens/export.hpp"
#include "simlens/ingest.hpp"
#include "simlens/plotdata.hpp"
#include "simlens/report.hpp"

using namespace simlens;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(SIMLENS_CLI) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int st = ::pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class Workdir {
public:
    Workdir() : dir_(fs::temp_directory_path() / ("simlens-cli-" + std::to_string(::getpid()))) {
        fs::create_directories(dir_);
        std::ofstream(dir_ / "est.csv", std::ios::binary) << to_delimited(fixtures::case_study_standin(), TextFormat::Csv);
        std::ofstream(dir_ / "ragged.csv", std::ios::binary) << "a,b\n1,2\n3\n";
    }
    ~Workdir() { fs::remove_all(dir_); }
    std::string operator/(const std::string& name) const { return (dir_ / name).string(); }

private:
    fs::path dir_;
};

const std::string kMap = " --estimate theta --se se --true -0.5 --method method --by dgm --rep idrep";

}  // namespace

TEST_CASE("analyze writes the tidy table and is deterministic") {
    Workdir w;
    const auto a = run("analyze " + (w / "est.csv") + kMap);
    CHECK(a.status == 0);
    CHECK(a.out.rfind("dgm,method,measure,value,mcse,n_used\n", 0) == 0);
    const auto b = run("analyze " + (w / "est.csv") + kMap);
    CHECK(a.out == b.out);

    const auto json = run("analyze " + (w / "est.csv") + kMap + " --format json --dgm 2 --measures bias,cover");
    REQUIRE(json.status == 0);
    const auto recs = nlohmann::json::parse(json.out);
    CHECK(recs.size() == 6);

    const auto ds = apply_mapping(fixtures::case_study_standin(),
                                  report::mapping_from_json(nlohmann::ordered_json::parse(
                                      R"({"estimate":"theta","se":"se","true":-0.5,"method":"method","by":["dgm"],"rep":"idrep"})")));
    report::PerformanceQuery q;
    q.dgm = std::vector<std::string>{"2"};
    q.measures = std::vector<Measure>{Measure::Bias, Measure::Coverage};
    CHECK(json.out == report::render_performance(ds, q));
}

TEST_CASE("analyze latex, --no-mcse and --out") {
    Workdir w;
    const auto tex = run("analyze " + (w / "est.csv") + kMap + " --format latex --dgm 2 --measures bias,empse,modelse,cover");
    REQUIRE(tex.status == 0);
    CHECK(tex.out.find("\\toprule") != std::string::npos);
    CHECK(tex.out.find(" (0.00") != std::string::npos);
    const auto bare =
        run("analyze " + (w / "est.csv") + kMap + " --format latex --dgm 2 --measures bias,empse,modelse,cover --no-mcse");
    REQUIRE(bare.status == 0);
    CHECK(bare.out.find('(') == std::string::npos);

    const auto out = run("analyze " + (w / "est.csv") + kMap + " --out " + (w / "t.tsv") + " --format tsv");
    CHECK(out.status == 0);
    CHECK(out.out.empty());
    CHECK(slurp(w / "t.tsv").rfind("dgm\tmethod\tmeasure", 0) == 0);
}

TEST_CASE("missing reports zero missingness on complete data") {
    Workdir w;
    const auto r = run("missing " + (w / "est.csv") + kMap + " --format json");
    REQUIRE(r.status == 0);
    CHECK(nlohmann::json::parse(r.out)["total_missing"] == 0);
}

TEST_CASE("plot writes svg and data") {
    Workdir w;
    const auto s1 = run("plot " + (w / "est.csv") + kMap + " --kind forest --measure coverage");
    REQUIRE(s1.status == 0);
    CHECK(s1.out.rfind("<?xml", 0) == 0);
    const auto s2 = run("plot " + (w / "est.csv") + kMap + " --kind forest --measure coverage");
    CHECK(s1.out == s2.out);
    const auto files =
        run("plot " + (w / "est.csv") + kMap + " --kind zip --svg " + (w / "z.svg") + " --data " + (w / "z.json"));
    REQUIRE(files.status == 0);
    CHECK(slurp(w / "z.svg").find("</svg>") != std::string::npos);
    const auto data = nlohmann::json::parse(slurp(w / "z.json"));
    CHECK(data["kind"] == "zip");
    CHECK(data["data"].size() == 6);
    const auto conv = run("plot " + (w / "est.csv") + kMap + " --kind heat --measure bias --export " + (w / "h.png") +
                          " --export-format png --converter 'printf converted'");
    CHECK(conv.status == 0);
    CHECK(slurp(w / "h.png") == "converted");
}

TEST_CASE("exit codes") {
    Workdir w;
    CHECK(run("").status == 2);
    CHECK(run("analyze").status == 2);
    CHECK(run("frobnicate").status == 2);
    CHECK(run("analyze " + (w / "est.csv") + kMap + " --format yaml").status == 2);
    CHECK(run("analyze " + (w / "est.csv") + " --estimate nope").status == 2);
    CHECK(run("analyze " + (w / "est.csv") + kMap + " --dgm 9").status == 2);
    CHECK(run("plot " + (w / "est.csv") + kMap + " --kind pie").status == 2);
    CHECK(run("analyze " + (w / "absent.csv") + kMap).status == 3);
    CHECK(run("analyze " + (w / "ragged.csv") + " --estimate a").status == 3);
    CHECK(run("analyze " + (w / "est.csv") + " --estimate theta --method method --by dgm --measures bias").status == 4);
    CHECK(run("plot " + (w / "est.csv") + kMap + " --kind heat --measure bias --export " + (w / "x.png") +
              " --export-format png --converter 'exit 1'")
              .status == 4);
    CHECK(run("--help").status == 0);
}

TEST_CASE("serve reports a busy port") {
    // Hold a port with a listening socket, then ask the CLI to bind it.
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    REQUIRE(::listen(fd, 1) == 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    CHECK(run("serve --bind 127.0.0.1 --port " + std::to_string(port)).status == 5);
    ::close(fd);
}
