//! Raw JSON-RPC sessions against the bundled server executables.

use std::process::Stdio;
use std::time::Duration;

use labmcp_protocol::message::{INVALID_PARAMS, METHOD_NOT_FOUND, PARSE_ERROR};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::process::{Child, ChildStdin, ChildStdout, Command};

pub struct Case {
    pub bin: &'static str,
    pub name: &'static str,
    pub tools: usize,
    pub call: (&'static str, Value, &'static str),
    pub bad_args: (&'static str, Value),
    pub tool_error: (&'static str, Value),
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            bin: env!("CARGO_BIN_EXE_simlab-server"),
            name: "simlab",
            tools: 6,
            call: ("color_difference", json!({"hex_a": "#000000", "hex_b": "#000000"}), "0"),
            bad_args: ("dispense", json!({"dye": "red", "volume_ml": "lots", "well": 1})),
            tool_error: ("measure_color", json!({"well": 99})),
        },
        Case {
            bin: env!("CARGO_BIN_EXE_decision-server"),
            name: "nimo",
            tools: 8,
            call: ("gen_grid", json!({}), "red,yellow,blue,objective"),
            bad_args: ("update", json!({})),
            tool_error: ("selection", json!({"method": "RE"})),
        },
        Case {
            bin: env!("CARGO_BIN_EXE_fixture-server"),
            name: "fixture",
            tools: 9,
            call: ("add", json!({"a": 2, "b": 3}), "sum = 5"),
            bad_args: ("add", json!({"a": 2})),
            tool_error: ("fail", json!({})),
        },
    ]
}

pub enum Wire {
    Stdio {
        _child: Child,
        stdin: ChildStdin,
        out: Lines<BufReader<ChildStdout>>,
    },
    Http {
        _child: Child,
        client: reqwest::Client,
        url: String,
    },
}

pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

impl Wire {
    pub fn stdio(bin: &str) -> Self {
        let mut child = Command::new(bin)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .kill_on_drop(true)
            .spawn()
            .unwrap();
        Wire::Stdio {
            stdin: child.stdin.take().unwrap(),
            out: BufReader::new(child.stdout.take().unwrap()).lines(),
            _child: child,
        }
    }

    pub async fn http(bin: &str) -> Self {
        let port = free_port();
        let child = Command::new(bin)
            .args(["--transport", "http", "--port", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .kill_on_drop(true)
            .spawn()
            .unwrap();
        let client = reqwest::Client::new();
        let url = format!("http://127.0.0.1:{port}/rpc");
        for _ in 0..400 {
            if client.post(&url).body("{}").send().await.is_ok() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        Wire::Http {
            _child: child,
            client,
            url,
        }
    }

    pub async fn send(&mut self, line: &str) -> Value {
        match self {
            Wire::Stdio { stdin, out, .. } => {
                stdin.write_all(format!("{line}\n").as_bytes()).await.unwrap();
                let reply = tokio::time::timeout(Duration::from_secs(10), out.next_line())
                    .await
                    .unwrap()
                    .unwrap()
                    .expect("server stays up");
                serde_json::from_str(&reply).unwrap()
            }
            Wire::Http { client, url, .. } => client
                .post(url.as_str())
                .body(line.to_owned())
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap(),
        }
    }

    pub async fn call(&mut self, id: u64, tool: &str, args: &Value) -> Value {
        let msg = json!({"jsonrpc": "2.0", "id": id, "method": "tools/call",
                         "params": {"name": tool, "arguments": args}});
        self.send(&msg.to_string()).await
    }
}

pub async fn conform(mut wire: Wire, case: &Case) {
    let init = wire
        .send(r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{"protocolVersion":"2024-11-05","capabilities":{},"clientInfo":{"name":"t","version":"0"}}}"#)
        .await;
    assert_eq!(init["result"]["serverInfo"]["name"], case.name);
    assert_eq!(init["result"]["protocolVersion"], "2024-11-05");
    let list = wire.send(r#"{"jsonrpc":"2.0","id":2,"method":"tools/list"}"#).await;
    assert_eq!(list["result"]["tools"].as_array().unwrap().len(), case.tools);

    let (tool, args, expect) = &case.call;
    let r = wire.call(3, tool, args).await;
    assert_eq!(r["id"], 3);
    assert_eq!(r["result"]["isError"], false, "{r}");
    assert!(r["result"]["content"][0]["text"].as_str().unwrap().starts_with(expect), "{r}");

    assert_eq!(wire.send("{\"jsonrpc\":\"2.0\",\"id\":4,").await["error"]["code"], PARSE_ERROR);
    assert_eq!(
        wire.send(r#"{"jsonrpc":"2.0","id":5,"method":"prompts/list"}"#).await["error"]["code"],
        METHOD_NOT_FOUND
    );
    let r = wire.call(6, case.bad_args.0, &case.bad_args.1).await;
    assert_eq!(r["error"]["code"], INVALID_PARAMS, "{r}");
    let r = wire.call(7, case.tool_error.0, &case.tool_error.1).await;
    assert_eq!(r["result"]["isError"], true, "{r}");

    let r = wire.call(8, tool, args).await;
    assert_eq!(r["result"]["isError"], false, "server survives errors");
}

