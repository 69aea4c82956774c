#!/usr/bin/env node
import { FIGURE_KINDS, FigureKind, render, SchemaError } from './index'

function usage(): never {
  console.error(`usage: plotkit <kind> <input> -o <figure.svg>\n` +
    `  kinds: ${FIGURE_KINDS.join(', ')}\n` +
    `  input: frames.jsonl (cluster.csv for cluster-example)`)
  process.exit(2)
}

export function main(argv: string[]): number {
  const args = argv.slice(2)
  if (args.length < 3) usage()
  const kind = args[0] as FigureKind
  if (!FIGURE_KINDS.includes(kind)) usage()
  const input = args[1]
  const oIdx = args.indexOf('-o')
  if (oIdx < 0 || oIdx + 1 >= args.length) usage()
  const output = args[oIdx + 1]
  try {
    render({ kind, input, output })
  } catch (e) {
    if (e instanceof SchemaError) {
      console.error(`plotkit: schema mismatch: ${e.message}`)
      return 1
    }
    console.error(`plotkit: ${e}`)
    return 1
  }
  console.log(`wrote ${output}`)
  return 0
}

if (require.main === module) {
  process.exit(main(process.argv))
}
