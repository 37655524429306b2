#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace bsdelab {

// Fixed CSV dialect for bit-stable diffs: comma separator, '.' decimal point,
// one header row, LF line endings, fixed column order, doubles as %.17g.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    void cell(const std::string& s);
    void cell(double v);
    void cell(std::int64_t v);
    void cell(int v) { cell(static_cast<std::int64_t>(v)); }
    void end_row();

  private:
    std::ofstream out_;
    bool rowStarted_ = false;
};

std::string format_double(double v);  // %.17g

// FNV-1a over the raw bytes of a file; used for manifest checksums.
std::uint64_t fnv1a_file(const std::string& path);

}  // namespace bsdelab
