fn main() {
    std::process::exit(anomaly_transformer::cli::main());
}
