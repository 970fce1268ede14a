#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "pedsleep/edf.hpp"

using namespace pedsleep;

namespace {

testing::EdfFixtureSignal signal(const std::string& label, int rate, int records, std::int16_t start = 0) {
  testing::EdfFixtureSignal s{label, -250.0, 250.0, -32768, 32767, rate, {}};
  for (int i = 0; i < rate * records; ++i) s.digital.push_back(static_cast<std::int16_t>(start + i));
  return s;
}

}  // namespace

TEST_CASE("digital to physical scaling") {
  EdfSignalHeader s{"EEG", "uV", -250, 250, -32768, 32767, 1};
  // (0 + 32768) * 500 / 65535 - 250
  CHECK(digital_to_physical(s, 0) == doctest::Approx(0.0038147).epsilon(1e-6));
  CHECK(digital_to_physical(s, -32768) == doctest::Approx(-250.0));
  CHECK(digital_to_physical(s, 32767) == doctest::Approx(250.0));
}

TEST_CASE("ingest two-signal fixture") {
  const auto dir = testing::temp_dir("edf");
  const auto path = dir / "night.edf";
  testing::write_edf(path, {signal("C3-M2", 4, 3), signal("SpO2", 4, 3, 100), signal("Pleth", 4, 3)}, 3, 1.0);

  EdfOptions opts;
  opts.target_rate = 4.0;
  const auto r = ingest_edf(path, opts);
  REQUIRE(r.recording.channel_count() == 2);
  CHECK(r.recording.channels[0].name == "EEG C3-M2");
  CHECK(r.recording.channels[1].name == "SPO2");
  CHECK(r.recording.length() == 12);
  CHECK(r.recording.recording_id == "night");
  CHECK(r.dropped_channels == std::vector<std::string>{"Pleth"});
  CHECK(r.missing_channels.size() == 14);
  const EdfSignalHeader hdr{"", "", -250, 250, -32768, 32767, 4};
  for (int i = 0; i < 12; ++i) {
    CHECK(r.recording.samples(0, i) == doctest::Approx(digital_to_physical(hdr, i)).epsilon(1e-6));
    CHECK(r.recording.samples(1, i) == doctest::Approx(digital_to_physical(hdr, 100 + i)).epsilon(1e-6));
  }
}

TEST_CASE("all 16 canonical channels") {
  const auto dir = testing::temp_dir("edf16");
  std::vector<testing::EdfFixtureSignal> sigs;
  for (const auto& n : canonical_channels()) sigs.push_back(signal(n, 2, 2));
  testing::write_edf(dir / "full.edf", sigs, 2, 1.0);
  EdfOptions opts;
  opts.target_rate = 2.0;
  const auto r = ingest_edf(dir / "full.edf", opts);
  CHECK(r.recording.channel_count() == 16);
  CHECK(r.missing_channels.empty());
}

TEST_CASE("resampling to the common rate") {
  const auto dir = testing::temp_dir("edfrate");
  testing::write_edf(dir / "r.edf", {signal("EEG C3-M2", 8, 2)}, 2, 1.0);
  EdfOptions opts;
  opts.target_rate = 4.0;
  opts.channels = {"EEG C3-M2"};
  const auto r = ingest_edf(dir / "r.edf", opts);
  REQUIRE(r.recording.length() == 8);
  const EdfSignalHeader hdr{"", "", -250, 250, -32768, 32767, 8};
  // Output sample k sits at source index 2k.
  for (int k = 0; k < 8; ++k) CHECK(r.recording.samples(0, k) == doctest::Approx(digital_to_physical(hdr, 2 * k)));
}

TEST_CASE("alias table extends matching") {
  const auto dir = testing::temp_dir("edfalias");
  testing::write_edf(dir / "a.edf", {signal("my weird eeg", 2, 1)}, 1, 1.0);
  EdfOptions opts;
  opts.target_rate = 2.0;
  opts.aliases["My Weird EEG"] = "EEG F3-M2";
  const auto r = ingest_edf(dir / "a.edf", opts);
  REQUIRE(r.recording.channel_count() == 1);
  CHECK(r.recording.channels[0].name == "EEG F3-M2");
}

TEST_CASE("EDF error paths name the field") {
  const auto dir = testing::temp_dir("edferr");
  SUBCASE("truncated data record") {
    testing::write_edf(dir / "t.edf", {signal("C3-M2", 4, 3)}, 3, 1.0, 3);
    try {
      ingest_edf(dir / "t.edf");
      FAIL("expected EdfError");
    } catch (const EdfError& e) {
      CHECK(e.field() == "data_record");
      CHECK(std::string(e.what()).find("expected 24 bytes") != std::string::npos);
      CHECK(std::string(e.what()).find("found 21") != std::string::npos);
    }
  }
  SUBCASE("inconsistent record count") {
    testing::write_edf(dir / "n.edf", {signal("C3-M2", 4, 3)}, 3, 1.0, 0, 2);
    try {
      ingest_edf(dir / "n.edf");
      FAIL("expected EdfError");
    } catch (const EdfError& e) {
      CHECK(e.field() == "num_records");
    }
  }
  SUBCASE("zero digital range") {
    auto s = signal("C3-M2", 4, 1);
    s.digital_max = s.digital_min;
    testing::write_edf(dir / "z.edf", {s}, 1, 1.0);
    try {
      ingest_edf(dir / "z.edf");
      FAIL("expected EdfError");
    } catch (const EdfError& e) {
      CHECK(e.field() == "digital_max[0]");
    }
  }
  SUBCASE("malformed numeric field") {
    testing::write_edf(dir / "m.edf", {signal("C3-M2", 4, 1)}, 1, 1.0);
    std::fstream f(dir / "m.edf", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(236);  // num_records
    f.write("abc     ", 8);
    f.close();
    try {
      ingest_edf(dir / "m.edf");
      FAIL("expected EdfError");
    } catch (const EdfError& e) {
      CHECK(e.field() == "num_records");
    }
  }
}
