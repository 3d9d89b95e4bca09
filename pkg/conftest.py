collect_ignore = ["setup.py",
                  "docs/source/conf.py",
                  ]
