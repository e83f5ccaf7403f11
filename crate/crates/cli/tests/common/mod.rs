//! In-process HTTP service and blocking client helpers.

#![allow(dead_code)]

use std::io::Cursor;
use std::time::{Duration, Instant};

use edgewipe::features::{batch_extract, CannyParams};
use edgewipe::imaging::{slice_tiles, PadPolicy, Scene};
use edgewipe::translate::{train_translator, DiscriminatorSpec, GeneratorSpec, TrainConfig};
use edgewipe_cli::config::Config;
use edgewipe_cli::server::{router, AppState};
use image::{Rgb, RgbImage};
use reqwest::blocking::{multipart, Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

pub struct Server {
    pub base: String,
    pub state: AppState,
    pub client: Client,
    _dir: tempfile::TempDir,
}

pub fn start_with(edit: impl FnOnce(&mut Config)) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config { workspace: dir.path().join("ws"), ..Config::default() };
    edit(&mut config);
    let state = AppState::new(config).unwrap();
    let app = router(state.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server { base: format!("http://{addr}"), state, client: Client::builder().timeout(Duration::from_secs(120)).build().unwrap(), _dir: dir }
}

pub fn start() -> Server {
    start_with(|_| {})
}

pub fn scene_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        if (x as i32 % 32 - 16).pow(2) + (y as i32 % 32 - 12).pow(2) < 30 {
            Rgb([235, 230, 210])
        } else {
            Rgb([50 + (x % 64) as u8, 80, 60 + (y % 50) as u8])
        }
    })
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png).unwrap();
    buf
}

pub fn json_of(resp: Response) -> Value {
    resp.json().unwrap()
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Response {
        self.client.post(self.url(path)).json(body).send().unwrap()
    }

    pub fn upload(&self, img: &RgbImage, tile_size: Option<u32>) -> Value {
        let mut form = multipart::Form::new().part("image", multipart::Part::bytes(png_bytes(img)).file_name("scene.png"));
        if let Some(t) = tile_size {
            form = form.text("tile_size", t.to_string());
        }
        let resp = self.client.post(self.url("/scenes")).multipart(form).send().unwrap();
        assert_eq!(resp.status(), StatusCode::CREATED);
        json_of(resp)
    }

    /// Store a small checkpoint on disk only, without making it resident.
    pub fn store_checkpoint(&self, img: &RgbImage, tile_size: u32) -> String {
        let scene = Scene::from_pixels(img.clone(), "mem");
        let grid = slice_tiles(&scene, tile_size, PadPolicy::Reflect).unwrap();
        let pairs: Vec<_> = batch_extract(&grid, &CannyParams::default()).unwrap().into_iter().map(|(t, f)| (f, t)).take(2).collect();
        let d = DiscriminatorSpec { num_scales: 1, patch_receptive_field: 16, base_channels: 4, input_channels: 4 };
        let ckpt = train_translator(&pairs, &GeneratorSpec::unet(4, 3), &d, &TrainConfig { steps: 2, ..Default::default() }).unwrap();
        self.state.workspace.store_checkpoint(&ckpt).unwrap()
    }

    pub fn wait_for<F: Fn(&Value) -> bool>(&self, path: &str, done: F) -> Value {
        let t0 = Instant::now();
        loop {
            let v = json_of(self.get(path));
            if done(&v) {
                return v;
            }
            assert!(t0.elapsed() < Duration::from_secs(300), "timed out waiting on {path}: {v}");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

pub fn small_spec(steps: usize) -> Value {
    json!({
        "generator": {"family": "unet_skip", "base_channels": 4, "depth": 3},
        "discriminator": {"num_scales": 1, "patch_receptive_field": 16, "base_channels": 4},
        "train": {"steps": steps}
    })
}

pub fn rect(tile: (u32, u32), x0: u32, y0: u32, x1: u32, y1: u32) -> Value {
    json!({"shape": "rectangle", "geometry": {"x0": x0, "y0": y0, "x1": x1, "y1": y1}, "tile": [tile.0, tile.1]})
}

