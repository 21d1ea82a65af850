fn main() { std::process::exit(repeater_sim::cli::run(std::env::args().collect())); }
