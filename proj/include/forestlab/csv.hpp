#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace forestlab {

// Minimal CSV support for the numeric tables this project produces: no
// quoting, comma separated, header row first.

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name; throws if absent.
    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
std::vector<std::string> split_csv_line(const std::string& line);

double parse_double(const std::string& text);
/// Shortest representation that round-trips exactly.
std::string format_double(double value);

/// Writes to `<path>.tmp` and renames into place on close(), so an aborted
/// write never leaves a partial file at `path`.
class CsvWriter {
public:
    CsvWriter(std::string path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void write_row(const std::vector<std::string>& cells);
    void close();

private:
    std::string path_;
    std::string tmp_path_;
    std::ofstream out_;
    std::size_t width_;
    bool closed_ = false;
};

std::string join_csv(const std::vector<std::string>& cells);

/// Writes `contents` to `path` atomically (temp file + rename).
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace forestlab
