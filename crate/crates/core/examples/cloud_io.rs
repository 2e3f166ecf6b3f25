//! Writes a labelled cloud in the binary format, reads it back, and parses
//! the same points from the text format.

use xconv::data::cloud_io::{decode, encode, read_cloud, write_cloud};
use xconv::PointSet;

fn main() -> xconv::Result<()> {
    let cloud = PointSet::from_points(&[vec![0.0, 0.0, 1.0], vec![0.5, -0.5, 0.0], vec![-1.0, 0.25, 0.5]])?
        .with_point_labels(vec![0, 1, 1])?;
    let path = std::env::temp_dir().join("xconv_example.xpc");
    write_cloud(&path, &cloud)?;
    let back = read_cloud(&path)?;
    println!("binary: {} bytes, round trip exact: {}", encode(&cloud).len(), back == cloud);

    let text = "3 3 0 2\n0 0 1 0\n0.5 -0.5 0 1\n-1 0.25 0.5 1\n";
    println!("text format equal: {}", decode(text.as_bytes())? == cloud);

    match decode(b"XPC1\x07\x00\x00\x00") {
        Err(e) => println!("corrupt input: {e}"),
        Ok(_) => unreachable!("bad version must be rejected"),
    }
    std::fs::remove_file(path)?;
    Ok(())
}
