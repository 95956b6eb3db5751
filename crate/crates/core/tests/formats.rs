use depthfield::field::map_coord;
use depthfield::fixture::{make_fixture, FixtureKind};
use depthfield::io::{
    decode_params, decode_pfm, decode_pgm, decode_pyramid, encode_params, encode_pfm, encode_pgm, encode_ply,
    encode_pyramid, read_params, read_pfm, read_pyramid, write_params, write_pfm, write_ply, write_pyramid, PlyFormat,
};
use depthfield::{DecoderParams, DepthField, DepthMap, Error, FeatureLevel, FeaturePyramid, PointCloud, QueryCoord};

/// Level grids and channel widths of a patch-14 encoder run on an 896x504 image.
fn exporter_shaped_pyramid() -> FeaturePyramid {
    let shapes = [(144, 256, 4), (72, 128, 6), (36, 64, 8)];
    let levels = shapes
        .iter()
        .enumerate()
        .map(|(k, &(h, w, c))| {
            let data = (0..h * w * c)
                .map(|i| ((i * 31 + k * 7) % 97) as f32 / 97.0 - 0.5)
                .collect();
            FeatureLevel::new(h, w, c, data).unwrap()
        })
        .collect();
    FeaturePyramid::new(levels, 896, 504).unwrap()
}

#[test]
fn exporter_layout_parses_and_decodes() {
    let p = exporter_shaped_pyramid();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.idfp");
    write_pyramid(&p, &path).unwrap();
    let back = read_pyramid(&path).unwrap();
    assert_eq!(back, p);
    back.validate().unwrap();
    let dims: Vec<(usize, usize)> = back.levels.iter().map(|l| (l.width, l.height)).collect();
    assert_eq!(dims, vec![(256, 144), (128, 72), (64, 36)]);

    let coarse = &back.levels[2];
    assert_eq!(
        map_coord(QueryCoord::new(448.0, 252.0), coarse, 896, 504).unwrap(),
        (32.0, 18.0)
    );
    assert_eq!(
        map_coord(QueryCoord::new(896.0, 504.0), coarse, 896, 504).unwrap(),
        (63.0, 35.0)
    );

    let field = DepthField::new(back, DecoderParams::zeros(&p.channel_dims())).unwrap();
    let map = field.decode_grid(56, 32).unwrap();
    assert!(map.values().iter().all(|&d| d == 1.0));
}

#[test]
fn pyramid_bytes_are_canonical() {
    let fx = make_fixture(FixtureKind::Slanted { angle_deg: 20.0 }, 8, 6, 3).unwrap();
    let bytes = encode_pyramid(&fx.pyramid).unwrap();
    assert_eq!(&bytes[..4], b"IDFP");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 6);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
    let floats: usize = fx.pyramid.levels.iter().map(|l| l.data.len()).sum();
    assert_eq!(bytes.len(), 20 + 12 * 3 + 4 * floats);
    assert_eq!(encode_pyramid(&decode_pyramid(&bytes).unwrap()).unwrap(), bytes);
}

#[test]
fn pyramid_trailing_bytes_rejected() {
    let fx = make_fixture(FixtureKind::TwoPlane, 4, 4, 0).unwrap();
    let mut bytes = encode_pyramid(&fx.pyramid).unwrap();
    bytes.push(0);
    assert!(matches!(decode_pyramid(&bytes), Err(Error::Parse { .. })));
}

#[test]
fn params_round_trip_through_disk() {
    let fx = make_fixture(FixtureKind::StepEdge, 8, 8, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.idfw");
    write_params(&fx.params, &path).unwrap();
    let back = read_params(&path).unwrap();
    assert_eq!(back, fx.params);
    assert_eq!(encode_params(&back).unwrap(), std::fs::read(&path).unwrap());
    let field = DepthField::new(fx.pyramid.clone(), back).unwrap();
    let q = QueryCoord::new(2.5, 3.5);
    assert_eq!(
        field.decode_depth(q).unwrap(),
        fx.field().unwrap().decode_depth(q).unwrap()
    );
}

#[test]
fn params_for_wrong_pyramid_rejected() {
    let fx = make_fixture(FixtureKind::TwoPlane, 8, 8, 1).unwrap();
    let bytes = encode_params(&fx.params).unwrap();
    let params = decode_params(&bytes).unwrap();
    let one_level = FeaturePyramid::new(vec![fx.pyramid.levels[0].clone()], 8, 8).unwrap();
    assert!(DepthField::new(one_level, params).is_err());
}

#[test]
fn pfm_invalid_pixels_survive_disk() {
    let d = DepthMap::with_mask(4, 3, (1..=12).map(|v| v as f64 * 0.5).collect(), {
        let mut m = vec![true; 12];
        m[5] = false;
        m[11] = false;
        m
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    write_pfm(&d, &path).unwrap();
    let back = read_pfm(&path).unwrap();
    assert_eq!(back.valid(), d.valid());
    assert_eq!(back.valid_values(), d.valid_values());
    assert_eq!(encode_pfm(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn pfm_big_endian_matches_little_endian() {
    let d = DepthMap::from_fn(3, 2, |i, j| 1.0 + i as f64 + 10.0 * j as f64).unwrap();
    let le = encode_pfm(&d).unwrap();
    let header_len = b"Pf\n3 2\n-1.0\n".len();
    let mut be = b"Pf\n3 2\n1.0\n".to_vec();
    for c in le[header_len..].chunks_exact(4) {
        be.extend(c.iter().rev());
    }
    assert_eq!(decode_pfm(&be).unwrap(), decode_pfm(&le).unwrap());
}

#[test]
fn pgm_round_trip() {
    let mask: Vec<bool> = (0..35).map(|i| i % 3 == 0).collect();
    let bytes = encode_pgm(7, 5, &mask).unwrap();
    assert!(bytes.starts_with(b"P5\n7 5\n255\n"));
    assert_eq!(decode_pgm(&bytes).unwrap(), (7, 5, mask));
}

/// Minimal PLY reader for float vertices with optional normals and uchar colors.
fn read_ply_independent(bytes: &[u8]) -> PointCloud {
    let end = b"end_header\n";
    let split = bytes.windows(end.len()).position(|w| w == end).unwrap() + end.len();
    let header = std::str::from_utf8(&bytes[..split]).unwrap();
    let mut count = 0;
    let mut props = Vec::new();
    let mut binary = false;
    for line in header.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", f, _] => binary = *f == "binary_little_endian",
            ["element", "vertex", n] => count = n.parse().unwrap(),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let has_normals = props.iter().any(|p| p.1 == "nx");
    let has_colors = props.iter().any(|p| p.1 == "red");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    if binary {
        let mut pos = split;
        for _ in 0..count {
            let mut row = Vec::new();
            for (ty, _) in &props {
                if ty == "float" {
                    row.push(f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64);
                    pos += 4;
                } else {
                    row.push(bytes[pos] as f64);
                    pos += 1;
                }
            }
            rows.push(row);
        }
        assert_eq!(pos, bytes.len());
    } else {
        let body = std::str::from_utf8(&bytes[split..]).unwrap();
        rows = body
            .lines()
            .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), count);
    }
    let v3 = |r: &Vec<f64>, o: usize| [r[o] as f32, r[o + 1] as f32, r[o + 2] as f32];
    PointCloud {
        points: rows.iter().map(|r| v3(r, 0)).collect(),
        normals: has_normals.then(|| rows.iter().map(|r| v3(r, 3)).collect()),
        colors: has_colors.then(|| {
            let o = if has_normals { 6 } else { 3 };
            rows.iter()
                .map(|r| [r[o] as u8, r[o + 1] as u8, r[o + 2] as u8])
                .collect()
        }),
    }
}

#[test]
fn ply_variants_reload_equal() {
    let pc = PointCloud {
        points: vec![[0.1, -2.5, 3.0], [1e-3, 7.25, 0.5], [-4.0, 0.0, 1.0 / 3.0]],
        normals: Some(vec![[0.0, 0.0, -1.0], [0.6, 0.0, -0.8], [0.0, 1.0, 0.0]]),
        colors: Some(vec![[255, 0, 7], [1, 2, 3], [128, 128, 128]]),
    };
    for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
        assert_eq!(
            read_ply_independent(&encode_ply(&pc, format).unwrap()),
            pc,
            "{format:?}"
        );
    }
    let bare = PointCloud::from_points(pc.points.clone());
    assert_eq!(
        read_ply_independent(&encode_ply(&bare, PlyFormat::Ascii).unwrap()),
        bare
    );
}

#[test]
fn ply_empty_cloud_has_zero_element_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.ply");
    write_ply(
        &PointCloud::from_points(Vec::new()),
        &path,
        PlyFormat::BinaryLittleEndian,
    )
    .unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(String::from_utf8(bytes).unwrap().contains("element vertex 0\n"));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_pyramid(dir.path().join("nope.idfp")), Err(Error::Io(_))));
}
