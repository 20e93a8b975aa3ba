fn main() {
    std::process::exit(seqdiff::cli::run());
}
