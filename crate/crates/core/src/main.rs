fn main() {
    std::process::exit(gpiocal::cli::run());
}
