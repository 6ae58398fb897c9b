fn main() {
    std::process::exit(mfdnn::pipeline::dispatch(std::env::args_os()));
}
