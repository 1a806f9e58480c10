import { loadRules } from "./detect";
import { serve } from "./protocol";

function main(): void {
  const rulesPath = process.argv[2];
  if (!rulesPath) {
    process.stderr.write("usage: main.js <color-rules.json>\n");
    process.exit(2);
  }
  const rules = loadRules(rulesPath);
  serve(rules, { input: process.stdin, output: process.stdout }).then((code) => {
    process.exit(code);
  });
}

main();
