fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(format!("{crate_dir}/cbindgen.toml"))
        .expect("cbindgen.toml parses");
    match cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate() {
        Ok(bindings) => {
            if let Ok(out_dir) = std::env::var("OUT_DIR") {
                bindings.write_to_file(std::path::Path::new(&out_dir).join("coordtrack.h"));
            }
            // Checked-in copy for consumers that don't run cargo.
            bindings.write_to_file(format!("{crate_dir}/include/coordtrack.h"));
        }
        Err(e) => println!("cargo:warning=cbindgen generation failed: {e}"),
    }
}
